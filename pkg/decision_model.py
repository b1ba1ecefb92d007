"""
Theoretical decision distribution Q(Y | x; z_hat) under Gaussian logit noise

With Z ~ N(z_hat, sigma^2 I), label i is the decision when every difference
Z_i - Z_j is non-negative. Those L-1 differences are jointly Gaussian with
variance 2 sigma^2 and pairwise covariance sigma^2, so each probability is a
non-centred orthant probability.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np

from core import ConfigError, DecisionDistribution, LogitsVector, NoiseScale, as_label_space
from orthant import CholeskyFactor, OrthantProblem, QuadratureConfig, cholesky, orthant_probability

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecisionModelConfig:
    sigma: NoiseScale = field(default_factory=NoiseScale)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if not isinstance(self.sigma, NoiseScale):
            # only the scalar noise model is supported
            if np.ndim(self.sigma) != 0:
                raise ConfigError("only a scalar sigma (Sigma = sigma^2 I) is supported")
            object.__setattr__(self, 'sigma', NoiseScale(float(self.sigma)))

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]], quadrature: Optional[Dict[str, Any]] = None):
        section = section or {}
        return cls(sigma=NoiseScale(float(section.get('sigma', 1.0))),
                   quadrature=QuadratureConfig.from_dict(quadrature))


def difference_covariance(k_dim: int, sigma: NoiseScale) -> np.ndarray:
    """Covariance of the L-1 logit differences: 2 sigma^2 on the diagonal, sigma^2 elsewhere"""
    s2 = sigma.sigma ** 2
    return s2 * (np.eye(k_dim) + np.ones((k_dim, k_dim)))


@lru_cache(maxsize=64)
def _difference_factor(k_dim: int, sigma: float) -> CholeskyFactor:
    return cholesky(difference_covariance(k_dim, NoiseScale(sigma)))


def build_difference_problem(z_hat: LogitsVector, i: int, sigma: NoiseScale) -> OrthantProblem:
    i = z_hat.label_space.check_label(i)
    z = z_hat.values
    mu = z[i] - np.delete(z, i)
    return OrthantProblem(mu, difference_covariance(z.shape[0] - 1, sigma))


def theoretical_distribution(z_hat: LogitsVector, cfg: Optional[DecisionModelConfig] = None) -> DecisionDistribution:
    cfg = cfg or DecisionModelConfig()
    raw = label_probabilities(z_hat, cfg)
    total = math.fsum(raw)
    if abs(total - 1.0) > 10 * cfg.quadrature.tolerance:
        logger.warning("orthant probabilities sum to %.3g before renormalisation", total)
    return DecisionDistribution(raw / total)


def label_probabilities(z_hat: LogitsVector, cfg: DecisionModelConfig) -> np.ndarray:
    """Unnormalised orthant probability for every label"""
    size = z_hat.size
    factor = _difference_factor(size - 1, cfg.sigma.sigma)
    raw = np.empty(size)
    for i in range(size):
        problem = build_difference_problem(z_hat, i, cfg.sigma)
        # the covariance is exchangeable, so sorting the means leaves the
        # probability unchanged and makes it independent of label order
        canonical = OrthantProblem(np.sort(problem.mu)[::-1], problem.cov)
        raw[i] = orthant_probability(canonical, cfg.quadrature, factor=factor)
    return raw


def monte_carlo_distribution(z_hat: LogitsVector, sigma: NoiseScale, samples: int, seed: int,
                             chunk: int = 1_000_000) -> np.ndarray:
    """Argmax frequencies of Z ~ N(z_hat, sigma^2 I); validation oracle"""
    size = as_label_space(z_hat.size).size
    rng = np.random.default_rng(seed)
    counts = np.zeros(size, dtype=np.int64)
    remaining = samples
    while remaining > 0:
        m = min(chunk, remaining)
        draws = z_hat.values + sigma.sigma * rng.standard_normal((m, size))
        counts += np.bincount(np.argmax(draws, axis=1), minlength=size)
        remaining -= m
    return counts / samples
