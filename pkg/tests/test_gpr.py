import numpy as np
import pandas as pd
import pytest

from aero_fusion.dataset import forrester_high
from aero_fusion.gpr import (FIC, GPRConfig, GPRModel, fic_log_marginal_likelihood, fit_gpr,
                             predict_grid, report_uncertainty, select_active_subset,
                             squared_exponential, uncertainty_metric, variance_exact,
                             variance_fic)
from aero_fusion.labels import UNCERTAINTY_COLUMNS

__author__ = "aero_fusion developers"
__license__ = "mit"


def _fixed(signal_variance=1.3, lengthscale=0.4, noise_variance=0.01, **kwargs):
    return GPRConfig(signal_variance=signal_variance, lengthscale=[lengthscale],
                     noise_variance=noise_variance, **kwargs)


def _toy(rng, n_rows=3):
    states = rng.uniform(0.0, 1.0, size=(n_rows, 1))
    return states, np.sin(4 * states[:, 0]) + 0.1 * rng.normal(size=n_rows)


def _dense_covariance(model):
    covariance = squared_exponential(model.states, model.states, model.signal_variance,
                                     model.lengthscale)
    return covariance + (model.noise_variance + model.jitter) * np.eye(len(model.targets))


def test_zero_targets_give_zero_mean():
    states = np.linspace(0.0, 1.0, 6).reshape(-1, 1)
    model = fit_gpr(states, np.zeros(6), GPRConfig(n_starts=2))
    queries = np.linspace(0.0, 1.0, 13).reshape(-1, 1)
    np.testing.assert_array_equal(model.predict_mean(queries), 0.0)
    variance = variance_exact(model, queries)
    assert np.all((variance >= 0) & (variance <= model.signal_variance))


def test_log_marginal_likelihood_matches_dense_formula(rng):
    states, targets = _toy(rng)
    model = fit_gpr(states, targets, _fixed())
    covariance = _dense_covariance(model)
    _, log_determinant = np.linalg.slogdet(covariance)
    expected = (-0.5 * targets @ np.linalg.solve(covariance, targets) - 0.5 * log_determinant
                - 1.5 * np.log(2 * np.pi))
    assert model.log_marginal_likelihood() == pytest.approx(expected, abs=1e-8)


def test_exact_variance_matches_dense_inverse(rng):
    states, targets = _toy(rng)
    model = fit_gpr(states, targets, _fixed())
    inverse = np.linalg.inv(_dense_covariance(model))
    queries = rng.uniform(-0.5, 1.5, size=(10, 1))
    for query in queries:
        cross = squared_exponential(states, query.reshape(1, -1), 1.3, model.lengthscale)[:, 0]
        expected = 1.3 - cross @ inverse @ cross
        assert variance_exact(model, query)[0] == pytest.approx(expected, abs=1e-10)


def test_noise_free_training_point_has_no_variance():
    states = np.array([[0.0], [1.0], [2.0]])
    model = fit_gpr(states, [0.3, -0.2, 0.5], _fixed(signal_variance=0.5, lengthscale=0.5,
                                                      noise_variance=0.0))
    assert np.all(variance_exact(model, states) <= 1e-10)


def test_far_query_reverts_to_signal_variance(rng):
    states, targets = _toy(rng, n_rows=5)
    model = fit_gpr(states, targets, _fixed())
    assert variance_exact(model, [[50.0]])[0] == pytest.approx(1.3, abs=1e-6)


def test_prediction_is_independent_of_row_order(rng):
    states, targets = _toy(rng, n_rows=12)
    permutation = rng.permutation(12)
    queries = np.linspace(0.0, 1.0, 20).reshape(-1, 1)
    config = GPRConfig(n_starts=3)
    first = fit_gpr(states, targets, config)
    second = fit_gpr(states[permutation], targets[permutation], config)
    np.testing.assert_allclose(first.predict_mean(queries), second.predict_mean(queries),
                               atol=1e-8)
    np.testing.assert_allclose(first.variance(queries), second.variance(queries), atol=1e-8)


def test_more_data_never_increases_the_variance(rng):
    states, targets = _toy(rng, n_rows=10)
    queries = np.linspace(-0.2, 1.2, 30).reshape(-1, 1)
    smaller = fit_gpr(states[:-1], targets[:-1], _fixed())
    larger = fit_gpr(states, targets, _fixed())
    assert np.all(variance_exact(larger, queries) <= variance_exact(smaller, queries) + 1e-12)


def test_full_active_subset_selects_every_row(rng):
    states, targets = _toy(rng, n_rows=6)
    model = fit_gpr(states, targets, _fixed())
    np.testing.assert_array_equal(select_active_subset(model, 6), np.arange(6))
    with pytest.raises(ValueError):
        select_active_subset(model, 0)


def test_single_active_point_matches_brute_force_scan(rng):
    states, targets = _toy(rng)
    model = fit_gpr(states, targets, _fixed())
    scores = [fic_log_marginal_likelihood(model, [index]) for index in range(3)]
    assert select_active_subset(model, 1).tolist() == [int(np.argmax(scores))]


def test_duplicate_points_tie_to_the_lowest_index():
    states = np.full((4, 1), 0.5)
    model = fit_gpr(states, np.ones(4), _fixed(noise_variance=0.1))
    assert select_active_subset(model, 1).tolist() == [0]
    assert select_active_subset(model, 1).tolist() == [0]


def test_fic_with_full_active_set_equals_exact(rng):
    states = np.linspace(0.0, 1.0, 26).reshape(-1, 1)
    targets = np.sin(6 * states[:, 0]) + 0.05 * rng.normal(size=26)
    model = fit_gpr(states, targets, _fixed(signal_variance=1.0, lengthscale=0.04))
    sparse = model.with_active_subset(np.arange(26))
    queries = np.linspace(-0.1, 1.1, 100).reshape(-1, 1)
    assert np.max(np.abs(variance_fic(sparse, queries) - variance_exact(model, queries))) < 1e-8
    np.testing.assert_allclose(sparse.predict_mean(queries), model.predict_mean(queries),
                               atol=1e-6)


def test_fic_log_likelihood_with_full_active_set_equals_exact(rng):
    states, targets = _toy(rng, n_rows=8)
    model = fit_gpr(states, targets, _fixed())
    assert fic_log_marginal_likelihood(model, np.arange(8)) == pytest.approx(
        model.log_marginal_likelihood(), abs=1e-6)


def test_fic_single_active_point_matches_dense_formula():
    states = np.array([[0.0], [0.7]])
    model = fit_gpr(states, [0.4, -0.1], _fixed(signal_variance=1.0, lengthscale=0.5,
                                                 noise_variance=0.1))
    sparse = model.with_active_subset([0])

    def kernel(first, second):
        return squared_exponential(np.atleast_2d(first), np.atleast_2d(second), 1.0, [0.5])

    active = states[[0]]
    k_mm = kernel(active, active)
    k_mn = kernel(active, states)
    lambda_matrix = np.diag(np.diag(kernel(states, states) - k_mn.T @ np.linalg.inv(k_mm) @ k_mn)
                            + 0.1)
    middle = np.linalg.inv(k_mm) - np.linalg.inv(k_mm + k_mn @ np.linalg.inv(lambda_matrix)
                                                 @ k_mn.T)
    for query in np.linspace(-0.5, 1.5, 9):
        k_m = kernel(active, [[query]])[:, 0]
        expected = 1.0 - k_m @ middle @ k_m
        assert variance_fic(sparse, [[query]])[0] == pytest.approx(expected, abs=1e-8)


def test_fic_far_query_reverts_to_signal_variance(rng):
    states, targets = _toy(rng, n_rows=6)
    sparse = fit_gpr(states, targets, _fixed()).with_active_subset([1, 4])
    assert variance_fic(sparse, [[40.0]])[0] == pytest.approx(1.3, abs=1e-6)


def test_fic_variance_needs_an_active_subset(rng):
    states, targets = _toy(rng)
    with pytest.raises(ValueError, match="active subset"):
        variance_fic(fit_gpr(states, targets, _fixed()), [[0.5]])


def test_fic_fit_selects_the_requested_active_size(rng):
    states, targets = _toy(rng, n_rows=20)
    model = fit_gpr(states, targets, _fixed(mode=FIC, active_size=5))
    assert model.mode == FIC
    assert len(model.active) == 5
    variance = model.variance(np.linspace(0, 1, 11).reshape(-1, 1))
    assert np.all(np.isfinite(variance)) and np.all(variance >= 0)


def test_unknown_mode_is_rejected():
    with pytest.raises(ValueError, match="Please pick one of"):
        fit_gpr([[0.0], [1.0]], [0.0, 1.0], GPRConfig(mode="sparse"))


def test_uncertainty_metric_examples():
    assert uncertainty_metric(np.ones(10), alpha=0.05) == pytest.approx(3.919928, abs=1e-6)
    assert uncertainty_metric(np.zeros(4)) == 0.0
    sigmas = np.array([0.1, 0.4, 0.2])
    assert uncertainty_metric(3 * sigmas) == pytest.approx(3 * uncertainty_metric(sigmas))
    assert uncertainty_metric(sigmas) == pytest.approx(2 * 1.959964 * sigmas.mean(), abs=1e-6)


def test_uncertainty_metric_rejects_bad_input():
    with pytest.raises(ValueError, match=">= 0"):
        uncertainty_metric([0.1, -0.1])
    with pytest.raises(ValueError, match="alpha"):
        uncertainty_metric([0.1], alpha=1.5)


def test_report_interval_width_is_the_metric(rng, tmp_path):
    states, targets = _toy(rng, n_rows=8)
    model = fit_gpr(states, targets, _fixed())
    report = report_uncertainty(model, rng.uniform(0, 1, size=(15, 1)))
    assert np.mean(report.upper - report.lower) == pytest.approx(report.uncertainty)
    assert report.summary()["N_test"] == 15

    path = tmp_path / "uncertainty.csv"
    report.to_csv(path)
    frame = pd.read_csv(path)
    assert tuple(frame.columns) == UNCERTAINTY_COLUMNS
    assert len(frame) == 15


def test_grid_export(rng):
    states, targets = _toy(rng, n_rows=8)
    model = fit_gpr(states, targets, _fixed())
    frame = predict_grid(model, ["x"], n_points=25)
    assert list(frame.columns) == ["x", "mean", "sigma"]
    assert len(frame) == 25

    planar = GPRModel(rng.uniform(size=(10, 2)), rng.normal(size=10), 1.0, [0.3, 0.3], 0.01)
    frame = predict_grid(planar, ["Ma", "alpha"], n_points=6)
    assert len(frame) == 36
    assert np.all(frame["sigma"] >= 0)


def test_dense_clean_responses_are_less_uncertain_than_sparse_noisy_ones():
    rng = np.random.default_rng(0)
    sparse_states = np.linspace(0.0, 1.0, 40).reshape(-1, 1)
    noisy = forrester_high(sparse_states[:, 0]) + rng.normal(0.0, 0.1, size=40)
    dense_states = np.linspace(0.0, 1.0, 200).reshape(-1, 1)
    clean = forrester_high(dense_states[:, 0])
    queries = rng.uniform(0.0, 1.0, size=(50, 1))
    config = GPRConfig(n_starts=4)
    noisy_report = report_uncertainty(fit_gpr(sparse_states, noisy, config), queries)
    clean_report = report_uncertainty(fit_gpr(dense_states, clean, config), queries)
    assert clean_report.uncertainty < noisy_report.uncertainty


def test_refit_on_scaled_targets_scales_the_prediction(rng):
    states, targets = _toy(rng, n_rows=12)
    queries = np.linspace(0.0, 1.0, 15).reshape(-1, 1)
    config = GPRConfig(n_starts=4)
    model = fit_gpr(states, targets, config)
    scaled = fit_gpr(states, -2.0 * targets, config)
    np.testing.assert_allclose(np.sqrt(scaled.variance(queries)),
                               2.0 * np.sqrt(model.variance(queries)), rtol=1e-3, atol=1e-9)
    np.testing.assert_allclose(scaled.predict_mean(queries), -2.0 * model.predict_mean(queries),
                               rtol=1e-3, atol=1e-9)
