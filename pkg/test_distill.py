#!/usr/bin/env python3
"""
Test the KD losses, soft-label export and the synthetic distillation benchmark
"""
import json
import math

import numpy as np
import pytest

from core import ConfigError, ContractViolation, LogitsVector, TrainingDivergenceError
from distill import (METHODS, KdLossConfig, ToyScenario, compare_methods, export_soft_labels,
                     kd_gradient, kd_loss, kd_loss_to_targets, kl_divergence, make_soft_label_record,
                     make_toy_data, method_targets, soft_label, sweep_toy, toy_distillation_run,
                     total_loss, train_student)
from orthant import QuadratureConfig
from solver import SolveResult

LIGHT_QUADRATURE = QuadratureConfig(nodes_per_level=32, grid_points=65)
SWEEP_QUADRATURE = QuadratureConfig(nodes_per_level=16, grid_points=33)

SMALL = ToyScenario(train_size=200, test_size=100, epochs=60, sample_count=3, max_iterations=30,
                    quadrature=QuadratureConfig(nodes_per_level=16, grid_points=33))


@pytest.fixture(scope="module")
def default_scenario():
    return ToyScenario(quadrature=LIGHT_QUADRATURE)


@pytest.fixture(scope="module")
def default_data(default_scenario):
    return make_toy_data(default_scenario)


def test_kl_of_swapped_logits():
    expected = math.tanh(0.5)
    for direction in ('student_first', 'teacher_first'):
        cfg = KdLossConfig(direction=direction)
        assert kd_loss([1.0, 0.0], [0.0, 1.0], cfg) == pytest.approx(expected, abs=1e-11)
    assert kd_loss([0.3, 0.1, -0.2], [0.3, 0.1, -0.2]) == 0.0


def test_kd_loss_temperature_and_scaling():
    v, z = [2.0, 0.0, -1.0], [0.0, 1.0, 0.5]
    hot = kd_loss(v, z, KdLossConfig(tau=4.0))
    assert 0.0 < hot < kd_loss(v, z)
    scaled = kd_loss(v, z, KdLossConfig(tau=4.0, scale_by_tau_squared=True))
    assert scaled == pytest.approx(16.0 * hot)
    with pytest.raises(ContractViolation):
        kd_loss([1.0, 0.0], [1.0, 0.0, 0.0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-5
    for case in range(20):
        size = int(rng.integers(2, 6))
        v = rng.normal(0.0, 2.0, size=(1, size))
        t = rng.dirichlet(np.ones(size))[None, :]
        tau = float(rng.uniform(0.5, 3.0))
        for direction in ('student_first', 'teacher_first'):
            cfg = KdLossConfig(tau=tau, direction=direction, scale_by_tau_squared=bool(case % 2))
            analytic = kd_gradient(v, t, cfg)[0]
            numeric = np.empty(size)
            for i in range(size):
                up, down = v.copy(), v.copy()
                up[0, i] += h
                down[0, i] -= h
                numeric[i] = (kd_loss_to_targets(up, t, cfg) - kd_loss_to_targets(down, t, cfg)) / (2 * h)
            assert np.linalg.norm(numeric - analytic) <= 1e-4 * max(np.linalg.norm(analytic), 1e-3), \
                (case, direction)


def test_kl_divergence_handles_zero_mass():
    assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2.0))
    assert kl_divergence(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0


def test_soft_label_and_total_loss():
    p = soft_label(LogitsVector.of([1.0, 1.0, 1.0]), tau=3.0)
    assert np.allclose(p, 1.0 / 3.0)
    assert np.allclose(soft_label([0.0, 100.0]), [0.0, 1.0])
    with pytest.raises(ContractViolation):
        soft_label([0.0, 1.0], tau=0.0)
    assert total_loss(1.5, 0.5, 2.0) == 2.5


def test_soft_label_is_shift_invariant_and_permutes_with_the_logits():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        size = int(rng.integers(2, 8))
        z = rng.normal(0.0, 3.0, size=size)
        tau = float(rng.uniform(0.5, 5.0))
        p = soft_label(z, tau)
        assert np.allclose(soft_label(z + rng.uniform(-20.0, 20.0), tau), p, atol=1e-12)
        perm = rng.permutation(size)
        assert np.allclose(soft_label(z[perm], tau), p[perm], atol=1e-15)
        assert np.argmax(p) == np.argmax(z)


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        KdLossConfig(tau=0.0)
    with pytest.raises(ConfigError):
        KdLossConfig(lambda_=-1.0)
    with pytest.raises(ConfigError):
        KdLossConfig(direction='sideways')
    cfg = KdLossConfig.from_dict({'tau': 2.0, 'lambda': 0.5, 'direction': 'teacher_first'})
    assert (cfg.tau, cfg.lambda_, cfg.direction) == (2.0, 0.5, 'teacher_first')
    assert cfg.to_dict()['lambda'] == 0.5


def test_soft_label_export(tmp_path):
    result = SolveResult(LogitsVector.of([0.5, -0.25, -0.25]), True, 7, 4e-4)
    record = make_soft_label_record("doc-1", result, tau=2.0, counts=[6, 2, 2])
    path = tmp_path / "soft.jsonl"
    assert export_soft_labels([record, record], path) == 2
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == 2
    row = rows[0]
    assert row['id'] == "doc-1"
    assert row['z_hat'] == [0.5, -0.25, -0.25]
    assert row['tau'] == 2.0
    assert row['converged'] is True
    assert row['counts'] == [6, 2, 2]
    assert sum(row['probabilities']) == pytest.approx(1.0)
    assert np.allclose(row['probabilities'], soft_label(result.z_hat, 2.0))


def test_toy_data_is_reproducible(default_scenario):
    a = make_toy_data(default_scenario)
    b = make_toy_data(default_scenario)
    assert np.array_equal(a.x_train, b.x_train)
    assert np.array_equal(a.labelled, b.labelled)
    assert a.x_train.shape == (2000, 128)
    assert a.labelled.shape == (100,)
    circle = np.array([[2.0 * np.cos(t), 2.0 * np.sin(t)] for t in 2.0 * np.pi * np.arange(4) / 4])
    # only the first two features reach the teacher
    assert np.allclose(a.z_train, a.x_train[:, :2] @ (0.35 * circle).T)


def test_estimated_soft_labels_beat_heuristics(default_scenario, default_data):
    mse = {}
    for method in ('hard', 'smooth', 'noisy', 'dbkd'):
        probs = method_targets(method, default_scenario, default_data).probabilities
        mse[method] = float(np.mean((probs - _teacher_probs(default_data)) ** 2))
    assert mse['dbkd'] < mse['smooth'] < mse['noisy'] < mse['hard']


def _teacher_probs(data):
    z = data.z_train - data.z_train.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def test_standard_kd_recovers_the_teacher_exactly(default_scenario, default_data):
    report = toy_distillation_run(default_scenario, 'standard', default_data)
    assert report.mse == 0.0
    assert report.queries == 0
    assert 0.0 <= report.accuracy <= 1.0


def test_zero_lambda_ignores_the_targets(default_data):
    scenario = ToyScenario(lambda_=0.0, epochs=40)
    cfg = scenario.loss_config()
    targets = method_targets('smooth', scenario, default_data).targets
    with_targets = train_student(default_data, targets, scenario, cfg)
    without = train_student(default_data, None, scenario, cfg)
    x = default_data.x_test
    assert np.array_equal(with_targets.logits(x), without.logits(x))


def test_runaway_learning_rate_is_reported(default_data):
    scenario = ToyScenario(learning_rate=1e6, epochs=400)
    with pytest.raises(TrainingDivergenceError):
        train_student(default_data, None, scenario, scenario.loss_config())


def test_more_samples_do_not_hurt_accuracy(default_scenario):
    scenario = default_scenario.replace(quadrature=SWEEP_QUADRATURE)
    table = sweep_toy('N', [1, 2, 10, 40], scenario)
    assert list(table.columns) == ['value', 'accuracy', 'mse']
    accuracy = table['accuracy'].tolist()
    assert accuracy[0] <= accuracy[1] <= accuracy[2]
    # past N=10 the curve is flat up to test-set noise
    assert abs(accuracy[3] - accuracy[2]) <= 0.03
    assert table['mse'].iloc[0] > table['mse'].iloc[2]


def test_loose_error_bound_costs_accuracy(default_scenario):
    scenario = default_scenario.replace(quadrature=SWEEP_QUADRATURE)
    table = sweep_toy('epsilon', [1.0, 1e-3], scenario)
    # epsilon = 1 stops after a single update
    assert table['accuracy'].iloc[0] < table['accuracy'].iloc[1]
    assert table['mse'].iloc[0] > table['mse'].iloc[1]


def test_distillation_closes_the_gap_to_the_teacher(default_scenario):
    table = compare_methods(['student_ce', 'standard', 'dbkd'], default_scenario).set_index('method')
    assert table.loc['standard', 'accuracy'] > table.loc['student_ce', 'accuracy']
    assert table.loc['dbkd', 'accuracy'] > table.loc['student_ce', 'accuracy']
    assert table.loc['student_ce', 'accuracy'] < table.loc['student_ce', 'teacher_accuracy']


def test_sweep_rejects_bad_requests():
    with pytest.raises(ContractViolation):
        sweep_toy('N', [], SMALL)
    with pytest.raises(ContractViolation):
        sweep_toy('temperature', [1.0], SMALL)
    with pytest.raises(ContractViolation):
        sweep_toy('N', [0], SMALL)


def test_compare_all_methods_on_a_small_scenario():
    table = compare_methods(list(METHODS), SMALL)
    assert list(table['method']) == list(METHODS)
    by_method = table.set_index('method')
    assert by_method.loc['dbkd', 'queries'] == 200 * 3
    assert by_method.loc['hard', 'queries'] == 200
    assert by_method.loc['standard', 'queries'] == 0
    assert math.isnan(by_method.loc['student_ce', 'mse'])
    assert 0.0 <= by_method.loc['dbkd', 'converged_fraction'] <= 1.0
    assert by_method.loc['dbkd_no_empirical', 'one_hot_fraction'] == 1.0
    assert 0.0 <= by_method.loc['dbkd', 'one_hot_fraction'] <= 1.0
    assert math.isnan(by_method.loc['hard', 'one_hot_fraction'])
    assert table['accuracy'].between(0.0, 1.0).all()
    with pytest.raises(ContractViolation):
        toy_distillation_run(SMALL, 'magic')


def test_scenario_config_round_trip():
    scenario = ToyScenario.from_dict({'labels': 3, 'sample_count': 5}, {'nodes_per_level': 32},
                                     {'lambda': 0.5, 'tau': 2.0})
    assert scenario.labels == 3 and scenario.sample_count == 5
    assert scenario.lambda_ == 0.5 and scenario.tau == 2.0
    assert scenario.quadrature.nodes_per_level == 32
    assert scenario.to_dict()['quadrature']['nodes_per_level'] == 32
    assert scenario.solver_config().sigma.sigma == 1.0
    assert scenario.replace(model_sigma=2.0).solver_config().sigma.sigma == 2.0
    with pytest.raises(ConfigError):
        ToyScenario(labelled_fraction=0.0)
    with pytest.raises(ConfigError):
        ToyScenario(student_rank=5)
    assert ToyScenario.from_dict(None).lambda_ == 20.0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
