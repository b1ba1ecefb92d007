"""
Non-centred orthant probabilities P(U >= 0) for U ~ N(mu, R)

The covariance is factored as R = B B^T and the probability is evaluated as a
chain of nested one-dimensional integrals over standard normal variables,
level j integrating from (-mu_j - sum_{k<j} b_jk t_k) / b_jj to the truncation
point. The innermost level has the closed form Phi(.) and is never discretised.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.interpolate import BarycentricInterpolator
from scipy.special import ndtr

from core import ConfigError, ContractViolation, DecompositionError

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# rows handled per step of the general nested recursion
_NESTED_CHUNK = 4096


@dataclass(frozen=True)
class QuadratureConfig:
    nodes_per_level: int = 64
    upper_cut: float = 8.0
    tolerance: float = 1e-6
    grid_points: int = 129

    def __post_init__(self):
        if self.nodes_per_level < 8:
            raise ConfigError(f"nodes_per_level must be >= 8, got {self.nodes_per_level}")
        if self.upper_cut < 6:
            raise ConfigError(f"upper_cut must be >= 6, got {self.upper_cut}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if self.grid_points < 16:
            raise ConfigError(f"grid_points must be >= 16, got {self.grid_points}")

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]]) -> 'QuadratureConfig':
        section = section or {}
        defaults = cls()
        return cls(
            nodes_per_level=int(section.get('nodes_per_level', defaults.nodes_per_level)),
            upper_cut=float(section.get('upper_cut', defaults.upper_cut)),
            tolerance=float(section.get('tolerance', defaults.tolerance)),
            grid_points=int(section.get('grid_points', defaults.grid_points)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'nodes_per_level': self.nodes_per_level,
            'upper_cut': self.upper_cut,
            'tolerance': self.tolerance,
            'grid_points': self.grid_points,
        }


@dataclass(frozen=True, eq=False)
class OrthantProblem:
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float, copy=True).reshape(-1)
        cov = np.array(self.cov, dtype=float, copy=True)
        if mu.shape[0] < 1:
            raise ContractViolation("orthant problem needs at least one dimension")
        if cov.shape != (mu.shape[0], mu.shape[0]):
            raise ContractViolation(f"covariance shape {cov.shape} does not match mean length {mu.shape[0]}")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(cov)):
            raise ContractViolation("mean and covariance must be finite")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ContractViolation("covariance is not symmetric")
        mu.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, 'mu', mu)
        object.__setattr__(self, 'cov', cov)

    @property
    def dimension(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    b: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.b)

    def is_one_factor(self) -> bool:
        """True when every column's sub-diagonal entries are equal.

        Then all remaining lower limits depend on one running sum, which lets
        the inner integrals be tabulated on a one-dimensional grid.
        """
        b = self.b
        scale = max(1.0, float(np.max(np.abs(b))))
        for k in range(b.shape[0] - 1):
            column = b[k + 1:, k]
            if np.max(np.abs(column - column[0])) > 1e-12 * scale:
                return False
        return True


def cholesky(cov: np.ndarray) -> CholeskyFactor:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ContractViolation(f"covariance must be square, got shape {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise ContractViolation("covariance is not symmetric")
    try:
        b = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pivot = _failing_pivot(cov)
        raise DecompositionError(pivot, _schur_pivot(cov, pivot)) from None
    if np.any(np.diag(b) <= 0.0) or not np.all(np.isfinite(b)):
        pivot = int(np.argmax(~(np.diag(b) > 0.0)))
        raise DecompositionError(pivot, float(np.diag(b)[pivot]))
    b.setflags(write=False)
    return CholeskyFactor(b)


def _failing_pivot(cov: np.ndarray) -> int:
    for k in range(1, cov.shape[0] + 1):
        try:
            scipy.linalg.cholesky(cov[:k, :k], lower=True)
        except np.linalg.LinAlgError:
            return k - 1
    return cov.shape[0] - 1


def _schur_pivot(cov: np.ndarray, pivot: int) -> float:
    """Value the decomposition would need to take the square root of at the pivot"""
    if pivot == 0:
        return float(cov[0, 0])
    head = cov[:pivot, :pivot]
    col = cov[:pivot, pivot]
    return float(cov[pivot, pivot] - col @ np.linalg.solve(head, col))


@lru_cache(maxsize=16)
def _gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _level_nodes(lower: np.ndarray, q: QuadratureConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes t and weights w with sum(w * f(t)) ~ int_lower^cut phi(t) f(t) dt, per row"""
    cut = q.upper_cut
    xi, wi = _gauss_legendre(q.nodes_per_level)
    a = np.clip(lower, -cut, cut)
    half = 0.5 * (cut - a)
    t = a[:, None] + half[:, None] * (xi[None, :] + 1.0)
    w = half[:, None] * wi[None, :] * _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    return t, w


def _tabulate(func: Callable[[np.ndarray], np.ndarray], radius: float,
              q: QuadratureConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Replace func on [-radius, radius] by its Chebyshev-Lobatto interpolant"""
    if radius < 1e-14:
        value = float(func(np.zeros(1))[0])
        return lambda s: np.full(np.shape(s), value)
    m = q.grid_points
    grid = radius * np.cos(np.pi * np.arange(m) / (m - 1))
    interp = BarycentricInterpolator(grid, func(grid))

    def evaluate(s):
        s = np.asarray(s, dtype=float)
        flat = np.clip(s, -radius, radius).ravel()
        return np.asarray(interp(flat), dtype=float).reshape(s.shape)

    return evaluate


def _one_factor_orthant(mu: np.ndarray, factor: CholeskyFactor, q: QuadratureConfig) -> float:
    k_dim = mu.shape[0]
    b = factor.b
    diag = factor.diagonal
    if k_dim == 1:
        return float(ndtr(mu[0] / diag[0]))
    coupling = np.array([b[k + 1, k] for k in range(k_dim - 1)])
    # bound on |running sum| entering each level
    reach = np.concatenate([[0.0], q.upper_cut * np.cumsum(np.abs(coupling))])

    def last_level(s):
        return ndtr((mu[-1] + s) / diag[-1])

    def level(j, inner):
        def integrate(s):
            s = np.asarray(s, dtype=float)
            t, w = _level_nodes((-mu[j] - s) / diag[j], q)
            return np.sum(w * inner(s[:, None] + coupling[j] * t), axis=1)
        return integrate

    inner = last_level
    for j in range(k_dim - 2, 0, -1):
        inner = _tabulate(level(j, inner), reach[j], q)
    return float(level(0, inner)(np.zeros(1))[0])


def _nested_orthant(mu: np.ndarray, factor: CholeskyFactor, q: QuadratureConfig) -> float:
    b = factor.b
    diag = factor.diagonal
    k_dim = mu.shape[0]

    def recurse(partial: np.ndarray, weight: np.ndarray, j: int) -> float:
        if j == k_dim - 1:
            return float(np.dot(weight, ndtr(partial[:, j] / diag[j])))
        t, w = _level_nodes(-partial[:, j] / diag[j], q)
        next_weight = (weight[:, None] * w).ravel()
        next_partial = (partial[:, None, :] + t[:, :, None] * b[:, j][None, None, :]).reshape(-1, k_dim)
        live = next_weight > 0.0
        next_weight = next_weight[live]
        next_partial = next_partial[live]
        total = 0.0
        for start in range(0, next_weight.shape[0], _NESTED_CHUNK):
            stop = start + _NESTED_CHUNK
            total += recurse(next_partial[start:stop], next_weight[start:stop], j + 1)
        return total

    return recurse(mu[None, :], np.ones(1), 0)


def orthant_probability(p: OrthantProblem, q: Optional[QuadratureConfig] = None,
                        factor: Optional[CholeskyFactor] = None) -> float:
    """P(U_j >= 0 for all j), U ~ N(p.mu, p.cov).

    A precomputed factor of p.cov may be passed to skip the decomposition.
    """
    q = q or QuadratureConfig()
    factor = factor or cholesky(p.cov)
    if factor.b.shape[0] != p.dimension:
        raise ContractViolation("Cholesky factor does not match the problem dimension")
    if factor.is_one_factor():
        value = _one_factor_orthant(p.mu, factor, q)
    else:
        logger.debug("general covariance, nested recursion over %d levels", p.dimension)
        value = _nested_orthant(p.mu, factor, q)
    return min(1.0, max(0.0, value))


def monte_carlo_orthant(p: OrthantProblem, samples: int, seed: int,
                        chunk: int = 1_000_000) -> Tuple[float, float]:
    """Fraction of N(mu, R) draws in the non-negative orthant and its binomial standard error"""
    if samples < 1000:
        raise ContractViolation(f"monte carlo oracle needs at least 1000 samples, got {samples}")
    factor = cholesky(p.cov)
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = samples
    while remaining > 0:
        m = min(chunk, remaining)
        draws = rng.standard_normal((m, p.dimension)) @ factor.b.T + p.mu
        hits += int(np.count_nonzero(np.all(draws >= 0.0, axis=1)))
        remaining -= m
    prob = hits / samples
    return prob, math.sqrt(prob * (1.0 - prob) / samples)
