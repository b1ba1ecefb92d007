"""
Knowledge-distillation soft labels, losses and a toy end-to-end harness

The harness trains a rank-limited linear student on Gaussian blobs against a
hidden linear teacher that only reveals noisy top-1 decisions, and compares
soft-label methods by student accuracy and by the mean squared error between
each method's probabilities and the teacher's true softmax.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import log_softmax, rel_entr

from core import (ConfigError, ContractViolation, LogitsVector, NoiseScale, TrainingDivergenceError,
                  softmax)
from orthant import QuadratureConfig
from solver import SolveResult, SolverConfig, solve_compositions
from teacher import simulate_decision_counts
from utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

DIRECTIONS = ('student_first', 'teacher_first')

# stable ids keep each method's random stream independent of run order
METHODS = {
    'hard': 1,
    'smooth': 2,
    'noisy': 3,
    'standard': 4,
    'dbkd': 5,
    'dbkd_no_empirical': 6,
    'dbkd_no_theoretical': 7,
    'student_ce': 8,
    'surrogate': 9,
}

SWEEP_PARAMETERS = ('N', 'epsilon', 'sigma')

SMOOTHING_FACTOR = 0.1
NOISY_MIX = 0.1
NOISY_CONCENTRATION = 0.5
_TARGET_FLOOR = 1e-12


@dataclass(frozen=True)
class KdLossConfig:
    tau: float = 1.0
    lambda_: float = 1.0
    direction: str = 'student_first'
    scale_by_tau_squared: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lambda_}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]]) -> 'KdLossConfig':
        section = section or {}
        defaults = cls()
        return cls(
            tau=float(section.get('tau', defaults.tau)),
            lambda_=float(section.get('lambda', defaults.lambda_)),
            direction=str(section.get('direction', defaults.direction)),
            scale_by_tau_squared=bool(section.get('scale_by_tau_squared', defaults.scale_by_tau_squared)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {'tau': self.tau, 'lambda': self.lambda_, 'direction': self.direction,
                'scale_by_tau_squared': self.scale_by_tau_squared}


def _values(z) -> np.ndarray:
    return z.values if isinstance(z, LogitsVector) else np.asarray(z, dtype=float)


def soft_label(z_hat, tau: float = 1.0) -> np.ndarray:
    """softmax(z_hat / tau), max-subtracted"""
    if not tau > 0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    return softmax(_values(z_hat), tau)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) along the last axis, with 0 log 0 = 0"""
    return np.maximum(0.0, np.sum(rel_entr(p, q), axis=-1))


def _scale(cfg: KdLossConfig) -> float:
    return cfg.tau ** 2 if cfg.scale_by_tau_squared else 1.0


def kd_loss(student_logits, teacher_logits, cfg: Optional[KdLossConfig] = None) -> float:
    """KL between the tempered student and teacher distributions; student first unless configured"""
    cfg = cfg or KdLossConfig()
    v = _values(student_logits)
    z = _values(teacher_logits)
    if v.shape != z.shape:
        raise ContractViolation(f"student logits {v.shape} and teacher logits {z.shape} differ in shape")
    log_s = log_softmax(v / cfg.tau, axis=-1)
    log_t = log_softmax(z / cfg.tau, axis=-1)
    if cfg.direction == 'student_first':
        value = np.sum(np.exp(log_s) * (log_s - log_t), axis=-1)
    else:
        value = np.sum(np.exp(log_t) * (log_t - log_s), axis=-1)
    return float(np.mean(np.maximum(0.0, value)) * _scale(cfg))


def kd_loss_to_targets(student_logits: np.ndarray, targets: np.ndarray, cfg: KdLossConfig) -> float:
    """Mean KD loss of tempered student logits against fixed target probabilities"""
    s = softmax(student_logits, cfg.tau)
    if cfg.direction == 'student_first':
        value = kl_divergence(s, targets)
    else:
        value = kl_divergence(targets, s)
    return float(np.mean(value) * _scale(cfg))


def kd_gradient(student_logits, targets, cfg: Optional[KdLossConfig] = None) -> np.ndarray:
    """Gradient of the per-row KD loss with respect to the student logits"""
    cfg = cfg or KdLossConfig()
    v = _values(student_logits)
    t = np.asarray(targets, dtype=float)
    log_s = log_softmax(v / cfg.tau, axis=-1)
    s = np.exp(log_s)
    if cfg.direction == 'student_first':
        a = log_s - np.log(t)
        grad = s * (a - np.sum(s * a, axis=-1, keepdims=True)) / cfg.tau
    else:
        grad = (s - t) / cfg.tau
    return grad * _scale(cfg)


def total_loss(ce: float, kd: float, lambda_: float) -> float:
    return ce + lambda_ * kd


@dataclass(frozen=True, eq=False)
class SoftLabelRecord:
    input_id: str
    z_hat: LogitsVector
    tau: float
    probabilities: np.ndarray
    converged: bool
    residual: float
    counts: Optional[List[int]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.input_id,
            'z_hat': self.z_hat.to_list(),
            'tau': self.tau,
            'probabilities': [float(p) for p in self.probabilities],
            'converged': bool(self.converged),
            'residual': float(self.residual),
            'counts': None if self.counts is None else [int(c) for c in self.counts],
        }


def make_soft_label_record(input_id: str, result: SolveResult, tau: float = 1.0,
                           counts: Optional[Sequence[int]] = None) -> SoftLabelRecord:
    return SoftLabelRecord(str(input_id), result.z_hat, float(tau), soft_label(result.z_hat, tau),
                           result.converged, result.residual_linf,
                           None if counts is None else [int(c) for c in counts])


def soft_labels_to_jsonl(records: Iterable[SoftLabelRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def export_soft_labels(records: Iterable[SoftLabelRecord], path) -> int:
    records = list(records)
    atomic_write_text(path, soft_labels_to_jsonl(records))
    logger.info("exported %d soft labels to %s", len(records), path)
    return len(records)


@dataclass(frozen=True)
class ToyScenario:
    """Gaussian blobs on a circle in the first two of `dims` features; the rest are noise.

    The student is rank-limited but can represent the teacher once it finds the
    informative plane, which the small labelled subset alone does poorly.
    """
    labels: int = 4
    dims: int = 128
    train_size: int = 2000
    test_size: int = 500
    radius: float = 2.0
    spread: float = 1.0
    teacher_scale: float = 0.35
    sigma: float = 1.0
    model_sigma: Optional[float] = None
    sample_count: int = 10
    epsilon: float = 1e-3
    max_iterations: int = 100
    labelled_fraction: float = 0.05
    student_rank: int = 2
    epochs: int = 400
    learning_rate: float = 0.01
    tau: float = 1.0
    lambda_: float = 20.0
    direction: str = 'student_first'
    scale_by_tau_squared: bool = False
    seed: int = 0
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.labels < 2 or self.dims < 2:
            raise ConfigError("the toy scenario needs at least 2 labels and 2 feature dimensions")
        if self.train_size < self.labels or self.test_size < 1:
            raise ConfigError("train and test sets are too small")
        if not 0.0 < self.labelled_fraction <= 1.0:
            raise ConfigError(f"labelled_fraction must lie in (0, 1], got {self.labelled_fraction}")
        if not 1 <= self.student_rank <= min(self.labels, self.dims):
            raise ConfigError(f"student_rank must lie in 1..{min(self.labels, self.dims)}")
        if self.sample_count < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("sample_count, epochs and learning_rate must be positive")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        # validates tau, lambda and direction
        self.loss_config()

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]], quadrature: Optional[Dict[str, Any]] = None,
                  distill: Optional[Dict[str, Any]] = None) -> 'ToyScenario':
        """Scenario section plus the distill section's loss settings"""
        section = section or {}
        distill = distill or {}
        defaults = cls()
        model_sigma = section.get('model_sigma', defaults.model_sigma)
        return cls(
            labels=int(section.get('labels', defaults.labels)),
            dims=int(section.get('dims', defaults.dims)),
            train_size=int(section.get('train_size', defaults.train_size)),
            test_size=int(section.get('test_size', defaults.test_size)),
            radius=float(section.get('radius', defaults.radius)),
            spread=float(section.get('spread', defaults.spread)),
            teacher_scale=float(section.get('teacher_scale', defaults.teacher_scale)),
            sigma=float(section.get('sigma', defaults.sigma)),
            model_sigma=None if model_sigma is None else float(model_sigma),
            sample_count=int(section.get('sample_count', defaults.sample_count)),
            epsilon=float(section.get('epsilon', defaults.epsilon)),
            max_iterations=int(section.get('max_iterations', defaults.max_iterations)),
            labelled_fraction=float(section.get('labelled_fraction', defaults.labelled_fraction)),
            student_rank=int(section.get('student_rank', defaults.student_rank)),
            epochs=int(section.get('epochs', defaults.epochs)),
            learning_rate=float(section.get('learning_rate', defaults.learning_rate)),
            tau=float(distill.get('tau', defaults.tau)),
            lambda_=float(distill.get('lambda', defaults.lambda_)),
            direction=str(distill.get('direction', defaults.direction)),
            scale_by_tau_squared=bool(distill.get('scale_by_tau_squared', defaults.scale_by_tau_squared)),
            seed=int(section.get('seed', defaults.seed)),
            quadrature=QuadratureConfig.from_dict(quadrature),
        )

    def to_dict(self) -> Dict[str, Any]:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__ if name != 'quadrature'}
        out['quadrature'] = self.quadrature.to_dict()
        return out

    def loss_config(self) -> KdLossConfig:
        return KdLossConfig(tau=self.tau, lambda_=self.lambda_, direction=self.direction,
                            scale_by_tau_squared=self.scale_by_tau_squared)

    def solver_config(self, theory: str = 'orthant') -> SolverConfig:
        sigma = self.model_sigma if self.model_sigma is not None else self.sigma
        return SolverConfig(epsilon=self.epsilon, max_iterations=self.max_iterations,
                            sigma=NoiseScale(sigma), quadrature=self.quadrature, theory=theory)

    def replace(self, **changes) -> 'ToyScenario':
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return ToyScenario(**values)


@dataclass(frozen=True)
class ToyReport:
    method: str
    accuracy: float
    teacher_accuracy: float
    mse: float
    queries: int = 0
    converged_fraction: float = math.nan
    one_hot_fraction: float = math.nan

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in REPORT_COLUMNS}


REPORT_COLUMNS = ('method', 'accuracy', 'teacher_accuracy', 'mse', 'queries', 'converged_fraction',
                  'one_hot_fraction')


@dataclass(frozen=True, eq=False)
class ToyData:
    x_train: np.ndarray
    y_train: np.ndarray
    z_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    z_test: np.ndarray
    labelled: np.ndarray


def _streams(seed: int):
    data, student = np.random.SeedSequence([seed, 0]).spawn(2)
    return np.random.default_rng(data), np.random.default_rng(student)


def _method_rng(seed: int, method: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, METHODS[method]]))


def class_means(scenario: ToyScenario) -> np.ndarray:
    """Class centres evenly spaced on a circle in the first two feature dimensions"""
    angles = 2.0 * np.pi * np.arange(scenario.labels) / scenario.labels
    means = np.zeros((scenario.labels, scenario.dims))
    means[:, 0] = scenario.radius * np.cos(angles)
    means[:, 1] = scenario.radius * np.sin(angles)
    return means


def make_toy_data(scenario: ToyScenario) -> ToyData:
    rng, _ = _streams(scenario.seed)
    means = class_means(scenario)

    def blobs(count):
        y = rng.permutation(np.arange(count) % scenario.labels)
        x = means[y] + scenario.spread * rng.standard_normal((count, scenario.dims))
        return x, y

    x_train, y_train = blobs(scenario.train_size)
    x_test, y_test = blobs(scenario.test_size)
    teacher_weights = scenario.teacher_scale * means
    n_labelled = max(scenario.labels, int(round(scenario.labelled_fraction * scenario.train_size)))
    labelled = np.sort(rng.choice(scenario.train_size, size=n_labelled, replace=False))
    return ToyData(x_train, y_train, x_train @ teacher_weights.T,
                   x_test, y_test, x_test @ teacher_weights.T, labelled)


def _one_hot_rows(labels: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], size))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class MethodTargets:
    """Training targets at the scenario temperature and tau=1 probabilities for the MSE.

    targets is None for methods without a distillation term; the fractions are
    NaN for methods that never count decisions.
    """
    targets: Optional[np.ndarray]
    probabilities: Optional[np.ndarray]
    queries: int
    converged_fraction: float = math.nan
    one_hot_fraction: float = math.nan


def _solve_rows(counts: np.ndarray, cfg: SolverConfig):
    solved = solve_compositions(counts, cfg)
    results = [solved[tuple(int(c) for c in row)] for row in counts]
    z_hat = np.stack([r.z_hat.values for r in results])
    converged = float(np.mean([r.converged for r in results]))
    return z_hat, converged


def one_hot_fraction(counts: np.ndarray) -> float:
    """Share of rows where a single label received every decision"""
    counts = np.asarray(counts)
    return float(np.mean(np.count_nonzero(counts, axis=1) == 1))


def method_targets(method: str, scenario: ToyScenario, data: ToyData) -> MethodTargets:
    if method not in METHODS:
        raise ContractViolation(f"unknown method {method!r}, expected one of {sorted(METHODS)}")
    rng = _method_rng(scenario.seed, method)
    size = scenario.labels
    tau = scenario.tau
    decisions = np.argmax(data.z_train, axis=1)
    hard = _one_hot_rows(decisions, size)
    n = data.z_train.shape[0]

    if method == 'hard':
        return MethodTargets(hard, hard, n)
    if method == 'smooth':
        probs = (1.0 - SMOOTHING_FACTOR) * hard + SMOOTHING_FACTOR / size
        return MethodTargets(probs, probs, n)
    if method == 'noisy':
        noise = rng.dirichlet(np.full(size, NOISY_CONCENTRATION), size=n)
        probs = (1.0 - NOISY_MIX) * hard + NOISY_MIX * noise
        return MethodTargets(probs, probs, n)
    if method == 'standard':
        return MethodTargets(softmax(data.z_train, tau), softmax(data.z_train), 0)
    if method == 'student_ce':
        return MethodTargets(None, None, 0)
    if method == 'surrogate':
        logits = fit_surrogate(data.x_train, decisions, scenario)
        return MethodTargets(softmax(logits, tau), softmax(logits), n)

    if method == 'dbkd_no_empirical':
        counts = hard.astype(np.int64)
        cfg = scenario.solver_config()
        queries = n
    else:
        counts = simulate_decision_counts(data.z_train, NoiseScale(scenario.sigma), scenario.sample_count, rng)
        theory = 'softmax' if method == 'dbkd_no_theoretical' else 'orthant'
        cfg = scenario.solver_config(theory)
        queries = n * scenario.sample_count
    z_hat, converged = _solve_rows(counts, cfg)
    return MethodTargets(softmax(z_hat, tau), softmax(z_hat), queries, converged, one_hot_fraction(counts))


def fit_surrogate(x: np.ndarray, decisions: np.ndarray, scenario: ToyScenario) -> np.ndarray:
    """Full-rank softmax regression on the teacher's hard decisions; returns its training logits"""
    size = scenario.labels
    target = _one_hot_rows(decisions, size)
    w = np.zeros((size, x.shape[1]))
    b = np.zeros(size)
    for _ in range(scenario.epochs):
        logits = x @ w.T + b
        grad = (softmax(logits) - target) / x.shape[0]
        w -= scenario.learning_rate * grad.T @ x
        b -= scenario.learning_rate * grad.sum(axis=0)
    return x @ w.T + b


class LinearStudent:
    """Rank-limited linear classifier: logits = x V U^T + b"""

    def __init__(self, labels: int, dims: int, rank: int, rng: np.random.Generator):
        self.u = 0.1 * rng.standard_normal((labels, rank))
        self.v = 0.1 * rng.standard_normal((dims, rank))
        self.b = np.zeros(labels)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.v) @ self.u.T + self.b

    def step(self, x: np.ndarray, grad_logits: np.ndarray, learning_rate: float):
        hidden = x @ self.v
        grad_u = grad_logits.T @ hidden
        grad_v = x.T @ (grad_logits @ self.u)
        grad_b = grad_logits.sum(axis=0)
        self.u -= learning_rate * grad_u
        self.v -= learning_rate * grad_v
        self.b -= learning_rate * grad_b

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def train_student(data: ToyData, targets: Optional[np.ndarray], scenario: ToyScenario,
                  cfg: KdLossConfig) -> LinearStudent:
    """Full-batch gradient descent on CE over the labelled subset plus lambda * KD over all points"""
    _, init_rng = _streams(scenario.seed)
    student = LinearStudent(scenario.labels, scenario.dims, scenario.student_rank, init_rng)
    x = data.x_train
    labelled = data.labelled
    y_onehot = _one_hot_rows(data.y_train[labelled], scenario.labels)
    use_kd = targets is not None and cfg.lambda_ > 0
    if use_kd and cfg.direction == 'student_first':
        targets = np.maximum(targets, _TARGET_FLOOR)
        targets = targets / targets.sum(axis=1, keepdims=True)

    for epoch in range(scenario.epochs):
        logits = student.logits(x)
        probs = softmax(logits)
        ce = float(-np.mean(np.sum(y_onehot * log_softmax(logits[labelled], axis=1), axis=1)))
        grad = np.zeros_like(logits)
        grad[labelled] = (probs[labelled] - y_onehot) / labelled.shape[0]
        kd = 0.0
        if use_kd:
            kd = kd_loss_to_targets(logits, targets, cfg)
            grad += cfg.lambda_ * kd_gradient(logits, targets, cfg) / x.shape[0]
        loss = total_loss(ce, kd, cfg.lambda_)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(f"non-finite loss {loss} at epoch {epoch}")
        student.step(x, grad, scenario.learning_rate)
    return student


def _mse(probs: Optional[np.ndarray], teacher_probs: np.ndarray) -> float:
    if probs is None:
        return math.nan
    return float(np.mean((probs - teacher_probs) ** 2))


def toy_distillation_run(scenario: Optional[ToyScenario] = None, method: str = 'dbkd',
                         data: Optional[ToyData] = None) -> ToyReport:
    scenario = scenario or ToyScenario()
    data = data if data is not None else make_toy_data(scenario)
    chosen = method_targets(method, scenario, data)
    cfg = scenario.loss_config()
    if method == 'hard':
        # one-hot targets have zeros, only the conventional direction is finite
        cfg = KdLossConfig(cfg.tau, cfg.lambda_, 'teacher_first', cfg.scale_by_tau_squared)
    student = train_student(data, chosen.targets, scenario, cfg)
    report = ToyReport(
        method=method,
        accuracy=float(np.mean(student.predict(data.x_test) == data.y_test)),
        teacher_accuracy=float(np.mean(np.argmax(data.z_test, axis=1) == data.y_test)),
        mse=_mse(chosen.probabilities, softmax(data.z_train)),
        queries=int(chosen.queries),
        converged_fraction=chosen.converged_fraction,
        one_hot_fraction=chosen.one_hot_fraction,
    )
    logger.info("toy run %s: accuracy %.4f, mse %.5f", method, report.accuracy, report.mse)
    return report


def compare_methods(methods: Sequence[str], scenario: Optional[ToyScenario] = None) -> pd.DataFrame:
    scenario = scenario or ToyScenario()
    data = make_toy_data(scenario)
    rows = [toy_distillation_run(scenario, m, data).to_dict() for m in methods]
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))


def sweep_toy(parameter: str, grid: Sequence[float], scenario: Optional[ToyScenario] = None,
              method: str = 'dbkd') -> pd.DataFrame:
    """Toy accuracy and MSE for each value of N, epsilon or the model sigma"""
    if parameter not in SWEEP_PARAMETERS:
        raise ContractViolation(f"unknown sweep parameter {parameter!r}, expected one of {SWEEP_PARAMETERS}")
    grid = list(grid)
    if not grid:
        raise ContractViolation("sweep grid is empty")
    scenario = scenario or ToyScenario()
    data = make_toy_data(scenario)
    rows = []
    for value in grid:
        if parameter == 'N':
            if int(value) != value or value < 1:
                raise ContractViolation(f"N must be a positive integer, got {value}")
            varied = scenario.replace(sample_count=int(value))
        elif parameter == 'epsilon':
            varied = scenario.replace(epsilon=float(value))
        else:
            varied = scenario.replace(model_sigma=float(value))
        report = toy_distillation_run(varied, method, data)
        rows.append({'value': value, 'accuracy': report.accuracy, 'mse': report.mse})
    return pd.DataFrame(rows, columns=['value', 'accuracy', 'mse'])
