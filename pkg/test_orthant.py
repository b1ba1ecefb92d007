#!/usr/bin/env python3
"""
Test the orthant probability engine against closed forms and a Monte-Carlo oracle
"""
import math

import numpy as np
import pytest
from scipy.stats import norm

from core import ConfigError, ContractViolation, DecompositionError, NoiseScale
from decision_model import difference_covariance
from orthant import (OrthantProblem, QuadratureConfig, cholesky, monte_carlo_orthant,
                     orthant_probability)


def test_one_dimension_is_normal_cdf():
    for mu in (-2.0, -0.3, 0.0, 1.7):
        p = OrthantProblem([mu], [[2.0]])
        assert orthant_probability(p) == pytest.approx(norm.cdf(mu / math.sqrt(2.0)), abs=1e-12)


def test_zero_mean_bivariate_closed_form():
    # P = 1/4 + asin(rho) / (2 pi)
    for rho in (-0.6, 0.0, 0.5, 0.9):
        p = OrthantProblem([0.0, 0.0], [[1.0, rho], [rho, 1.0]])
        expected = 0.25 + math.asin(rho) / (2.0 * math.pi)
        assert orthant_probability(p) == pytest.approx(expected, abs=1e-7)


def test_zero_mean_trivariate_general_covariance():
    r12, r13, r23 = 0.3, 0.1, 0.5
    cov = [[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]]
    factor = cholesky(np.array(cov))
    assert not factor.is_one_factor()
    expected = 0.125 + (math.asin(r12) + math.asin(r13) + math.asin(r23)) / (4.0 * math.pi)
    assert orthant_probability(OrthantProblem(np.zeros(3), cov)) == pytest.approx(expected, abs=1e-6)


def test_decision_covariance_is_one_factor():
    for k in range(1, 6):
        assert cholesky(difference_covariance(k, NoiseScale(1.5))).is_one_factor()


def test_equicorrelated_zero_mean():
    # L symmetric labels, each wins with probability 1/L
    for k in range(1, 6):
        p = OrthantProblem(np.zeros(k), difference_covariance(k, NoiseScale()))
        assert orthant_probability(p) == pytest.approx(1.0 / (k + 1), abs=1e-6)


def test_monte_carlo_agreement():
    rng = np.random.default_rng(20240611)
    for case in range(50):
        k = int(rng.integers(1, 5))
        mu = rng.uniform(-3.0, 3.0, size=k)
        problem = OrthantProblem(mu, difference_covariance(k, NoiseScale()))
        exact = orthant_probability(problem)
        estimate, se = monte_carlo_orthant(problem, 1_000_000, seed=case)
        assert abs(exact - estimate) <= 4.5 * se + 2e-4, (case, mu, exact, estimate)


def test_probability_bounds_and_monotone_in_mean():
    cov = difference_covariance(3, NoiseScale())
    low = orthant_probability(OrthantProblem([0.0, 0.0, 0.0], cov))
    high = orthant_probability(OrthantProblem([1.0, 0.5, 0.0], cov))
    assert 0.0 <= low < high <= 1.0
    assert orthant_probability(OrthantProblem([40.0, 40.0], [[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0)
    assert orthant_probability(OrthantProblem([-40.0, 0.0], [[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(0.0, abs=1e-12)


def test_cholesky_failure_reports_pivot():
    with pytest.raises(DecompositionError) as info:
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.pivot == 1
    assert info.value.value == pytest.approx(-3.0)


def test_problem_validation():
    with pytest.raises(ContractViolation):
        OrthantProblem([0.0, 0.0], [[1.0, 0.2], [0.3, 1.0]])
    with pytest.raises(ContractViolation):
        OrthantProblem([0.0, 0.0], np.eye(3))
    with pytest.raises(ContractViolation):
        monte_carlo_orthant(OrthantProblem([0.0], [[1.0]]), 10, seed=0)


def test_quadrature_config_validation():
    with pytest.raises(ConfigError):
        QuadratureConfig(nodes_per_level=4)
    with pytest.raises(ConfigError):
        QuadratureConfig(upper_cut=3.0)
    cfg = QuadratureConfig.from_dict({'nodes_per_level': 32})
    assert cfg.nodes_per_level == 32
    assert cfg.upper_cut == 8.0
    assert QuadratureConfig.from_dict(cfg.to_dict()) == cfg


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
