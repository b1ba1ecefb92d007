#!/usr/bin/env python3
"""
Test the theoretical decision distribution under Gaussian logit noise
"""
import math

import numpy as np
import pytest
from scipy.stats import norm

from core import ConfigError, ContractViolation, LogitsVector, NoiseScale
from decision_model import (DecisionModelConfig, build_difference_problem, difference_covariance,
                            monte_carlo_distribution, theoretical_distribution)
from orthant import QuadratureConfig


def test_two_labels_match_normal_cdf():
    for gap in (-2.0, -0.5, 0.0, 0.7, 3.0):
        for sigma in (0.5, 1.0, 2.0):
            cfg = DecisionModelConfig(sigma=NoiseScale(sigma))
            q = theoretical_distribution(LogitsVector.of([gap, 0.0]), cfg)
            assert q.probs[0] == pytest.approx(norm.cdf(gap / (sigma * math.sqrt(2.0))), abs=1e-10)


def test_equal_logits_give_uniform_decisions():
    for size in range(2, 7):
        q = theoretical_distribution(LogitsVector(np.full(size, 0.3)))
        assert np.allclose(q.probs, 1.0 / size, atol=1e-6)


def test_distribution_sums_to_one_and_is_ordered():
    z = LogitsVector.of([1.2, -0.4, -0.8, 0.1])
    q = theoretical_distribution(z)
    assert math.fsum(q.probs) == pytest.approx(1.0, abs=1e-12)
    # larger logit, larger probability
    assert list(np.argsort(-q.probs)) == [0, 3, 1, 2]


def test_translation_invariance():
    z = np.array([0.9, -0.2, 0.4])
    base = theoretical_distribution(LogitsVector(z)).probs
    shifted = theoretical_distribution(LogitsVector(z + 7.5)).probs
    assert np.allclose(base, shifted, atol=1e-9)


def test_permutation_equivariance_is_exact():
    rng = np.random.default_rng(3)
    z = rng.uniform(-1.5, 1.5, size=5)
    base = theoretical_distribution(LogitsVector(z)).probs
    for _ in range(5):
        perm = rng.permutation(5)
        permuted = theoretical_distribution(LogitsVector(z[perm])).probs
        assert np.array_equal(permuted, base[perm])


def test_shift_and_relabelling_properties():
    cfg = DecisionModelConfig(quadrature=QuadratureConfig(nodes_per_level=16, grid_points=33))
    rng = np.random.default_rng(71)
    for _ in range(1000):
        size = int(rng.integers(2, 6))
        z = rng.uniform(-3.0, 3.0, size=size)
        base = theoretical_distribution(LogitsVector(z), cfg).probs
        shifted = theoretical_distribution(LogitsVector(z + rng.uniform(-10.0, 10.0)), cfg).probs
        assert np.allclose(shifted, base, atol=1e-10)
        perm = rng.permutation(size)
        permuted = theoretical_distribution(LogitsVector(z[perm]), cfg).probs
        assert np.array_equal(permuted, base[perm])


def test_sigma_acts_as_a_scale():
    z = np.array([1.0, 0.2, -0.6])
    wide = theoretical_distribution(LogitsVector(z), DecisionModelConfig(sigma=NoiseScale(2.0))).probs
    unit = theoretical_distribution(LogitsVector(z / 2.0)).probs
    assert np.allclose(wide, unit, atol=1e-8)


def test_agrees_with_sampled_argmax_frequencies():
    rng = np.random.default_rng(11)
    samples = 200_000
    for case in range(10):
        size = int(rng.integers(2, 6))
        z = LogitsVector(rng.uniform(-2.0, 2.0, size=size))
        q = theoretical_distribution(z).probs
        freq = monte_carlo_distribution(z, NoiseScale(), samples, seed=case)
        se = np.sqrt(q * (1.0 - q) / samples)
        assert np.all(np.abs(q - freq) <= 4.5 * se + 2e-4), (case, q, freq)


def test_large_gap_is_nearly_one_hot():
    q = theoretical_distribution(LogitsVector.of([12.0, 0.0, 0.0]))
    assert q.probs[0] > 1.0 - 1e-12
    assert q.probs[0] <= 1.0


def test_difference_problem_layout():
    z = LogitsVector.of([1.0, 0.5, -1.0])
    problem = build_difference_problem(z, 1, NoiseScale(1.0))
    assert problem.mu.tolist() == [-0.5, 1.5]
    assert np.array_equal(problem.cov, difference_covariance(2, NoiseScale(1.0)))
    assert problem.cov.tolist() == [[2.0, 1.0], [1.0, 2.0]]
    with pytest.raises(ContractViolation):
        build_difference_problem(z, 3, NoiseScale(1.0))


def test_config_rejects_matrix_sigma():
    with pytest.raises(ConfigError):
        DecisionModelConfig(sigma=np.eye(3))
    cfg = DecisionModelConfig(sigma=0.5)
    assert cfg.sigma == NoiseScale(0.5)
    cfg = DecisionModelConfig.from_dict({'sigma': 2.0}, {'nodes_per_level': 32})
    assert cfg.sigma.sigma == 2.0
    assert cfg.quadrature == QuadratureConfig(nodes_per_level=32)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
