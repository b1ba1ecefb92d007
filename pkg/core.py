"""
Shared domain types for decision-based logits estimation
Label spaces, logits, decision distributions, noise scale and the error hierarchy
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.special


class DbkdError(Exception):
    """Base class for every error raised by this package"""


class ContractViolation(DbkdError, ValueError):
    """A precondition or type invariant was broken by the caller"""


class ConfigError(DbkdError, ValueError):
    """Invalid configuration value or configuration file"""


class DecompositionError(DbkdError):
    """Cholesky decomposition failed: the matrix is not positive definite"""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite (pivot {pivot}, value {value:.6g})")


class LookupMiss(DbkdError, KeyError):
    """Distribution is not on the lookup table grid; solve it directly instead"""

    def __str__(self):
        return str(self.args[0]) if self.args else "lookup miss"


class TransportError(DbkdError):
    """Remote decision API unreachable, timed out or exhausted its retries"""


class ProtocolError(DbkdError):
    """Remote decision API answered with a malformed payload"""


class EstimationError(DbkdError):
    """An oracle query failed while estimating the empirical decision distribution"""

    def __init__(self, draw_index: int, cause: Exception):
        self.draw_index = draw_index
        self.cause = cause
        super().__init__(f"oracle query failed at draw {draw_index}: {cause}")


class TrainingDivergenceError(DbkdError):
    """Non-finite loss while training the toy student"""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabelSpace:
    size: int

    def __post_init__(self):
        if isinstance(self.size, bool) or int(self.size) != self.size or self.size < 2:
            raise ContractViolation(f"label space needs at least 2 labels, got {self.size!r}")
        object.__setattr__(self, 'size', int(self.size))

    def check_label(self, label: int) -> int:
        """Return label as int, raising if it falls outside 0..L-1"""
        if isinstance(label, bool) or int(label) != label or not 0 <= label < self.size:
            raise ContractViolation(f"label {label!r} outside 0..{self.size - 1}")
        return int(label)

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class LogitsVector:
    values: np.ndarray
    label_space: LabelSpace = None

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 1:
            raise ContractViolation("logits must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("logits must be finite")
        label_space = self.label_space or LabelSpace(values.shape[0])
        if values.shape[0] != label_space.size:
            raise ContractViolation(
                f"logits length {values.shape[0]} does not match label space {label_space.size}")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'label_space', label_space)

    @classmethod
    def of(cls, values: Sequence[float]) -> 'LogitsVector':
        return cls(np.asarray(values, dtype=float))

    @property
    def size(self) -> int:
        return self.label_space.size

    def centered(self) -> np.ndarray:
        return self.values - self.values.mean()

    def to_list(self):
        return [float(v) for v in self.values]


@dataclass(frozen=True, eq=False)
class DecisionDistribution:
    probs: np.ndarray
    sample_count: Optional[int] = None

    def __post_init__(self):
        probs = _frozen_array(self.probs)
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise ContractViolation("decision distribution needs a vector over at least 2 labels")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ContractViolation("probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ContractViolation(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        if self.sample_count is not None:
            n = self.sample_count
            if isinstance(n, bool) or int(n) != n or n < 1:
                raise ContractViolation(f"sample count must be a positive integer, got {n!r}")
            scaled = probs * n
            if np.max(np.abs(scaled - np.round(scaled))) > 1e-9 * max(1, n):
                raise ContractViolation(f"probabilities are not multiples of 1/{n}")
            object.__setattr__(self, 'sample_count', int(n))
        object.__setattr__(self, 'probs', probs)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> 'DecisionDistribution':
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0) or counts.sum() < 1:
            raise ContractViolation("counts must be non-negative with a positive total")
        total = int(counts.sum())
        return cls(counts / total, sample_count=total)

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace(self.probs.shape[0])

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def counts(self) -> np.ndarray:
        """Integer label counts; only defined when sample_count is known"""
        if self.sample_count is None:
            raise ContractViolation("distribution has no sample count")
        return np.round(self.probs * self.sample_count).astype(np.int64)

    def is_one_hot(self) -> bool:
        return bool(np.max(self.probs) >= 1.0 - 1e-12)


@dataclass(frozen=True)
class NoiseScale:
    sigma: float = 1.0

    def __post_init__(self):
        sigma = float(self.sigma)
        if not math.isfinite(sigma) or sigma <= 0.0:
            raise ContractViolation(f"sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, 'sigma', sigma)


def as_label_space(value) -> LabelSpace:
    return value if isinstance(value, LabelSpace) else LabelSpace(value)


def argmax_decision(z: LogitsVector) -> int:
    """Top-1 decision; ties go to the lowest index"""
    # np.argmax returns the first maximal index
    return int(np.argmax(z.values))


def one_hot(d: int, label_space) -> DecisionDistribution:
    label_space = as_label_space(label_space)
    d = label_space.check_label(d)
    probs = np.zeros(label_space.size)
    probs[d] = 1.0
    return DecisionDistribution(probs, sample_count=1)


def softmax(values: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Softmax of values / tau along the last axis (max-subtracted by scipy)"""
    return scipy.special.softmax(np.asarray(values, dtype=float) / tau, axis=-1)
