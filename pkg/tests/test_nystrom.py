import numpy as np
import pytest

from kcoherence.delay import DelayConfig, dense_distance_graph
from kcoherence.errors import OutOfDistributionError, ShapeError
from kcoherence.kernel import build_markov_factor
from kcoherence.koopman import make_observable
from kcoherence.nystrom import (
    build_feature_model,
    extend_feature,
    extend_feature_batch,
    load_model,
    save_model,
)
from kcoherence.spectral import leading_eigenpairs
from kcoherence.trajectory import circle_flow, integrate_l63


def fit_small_model(traj, n_delays, n_pairs=6, pair=(1, 2)):
    cfg = DelayConfig(n_delays, traj.dt)
    # full kernel rows, so in-sample evaluation is exact
    graph = dense_distance_graph(traj, cfg)
    result = build_markov_factor(graph)
    eig = leading_eigenpairs(result.factor, n_pairs)
    obs = make_observable(eig, *pair, traj.dt)
    return build_feature_model(traj, result, obs), obs, cfg


class TestInSampleConsistency:
    def test_circle_reproduces_observable(self):
        traj = circle_flow(1.0, 2 * np.pi / 300, 300)
        model, obs, cfg = fit_small_model(traj, n_delays=1)
        for i in (0, 57, 299):
            got = extend_feature(model, traj.states[i:i + 1])
            assert abs(got - obs.z[i]) < 1e-6
            assert abs(abs(got) - abs(obs.z[i])) < 1e-6

    def test_l63_with_delays_reproduces_observable(self):
        traj = integrate_l63([1.0, 1.0, 1.0], dt=0.05, n_samples=240, spinup=30.0)
        q = 40
        model, obs, cfg = fit_small_model(traj, n_delays=q)
        for i in (0, 100, 200):
            got = extend_feature(model, traj.states[i:i + q])
            assert abs(got - obs.z[i]) < 1e-6

    def test_every_training_point(self):
        traj = circle_flow(1.0, 2 * np.pi / 150, 150)
        model, obs, _ = fit_small_model(traj, n_delays=1)
        values = extend_feature_batch(
            model, traj.states[:, None, :])
        assert np.abs(values - obs.z).max() < 1e-6


def test_degenerate_pair_rotation_invariance():
    # with equal eigenvalues, rotating the stored basis leaves |zeta| intact
    traj = circle_flow(1.0, 2 * np.pi / 200, 200)
    model, obs, _ = fit_small_model(traj, n_delays=1)
    lam = (model.eig_phi + model.eig_psi) / 2
    model.eig_phi = model.eig_psi = lam

    def rotated(theta):
        c, s = np.cos(theta), np.sin(theta)
        m = load_like(model)
        m.phi = c * model.phi + s * model.psi
        m.psi = -s * model.phi + c * model.psi
        # feature weights follow the basis rotation
        combo = m.phi / lam + 1j * m.psi / lam
        m.feature_weights = rebuild_weights(traj, combo)
        return m

    def load_like(m):
        import copy
        return copy.copy(m)

    def rebuild_weights(traj, combo):
        cfg = DelayConfig(1, traj.dt)
        graph = dense_distance_graph(traj, cfg)
        result = build_markov_factor(graph)
        return result.factor.g.T @ combo

    query = traj.states[33:34]
    base = abs(extend_feature(model, query))
    for theta in (0.3, 1.2):
        got = abs(extend_feature(rotated(theta), query))
        assert got == pytest.approx(base, abs=1e-10)


def test_wrong_query_shape():
    traj = circle_flow(1.0, 2 * np.pi / 100, 100)
    model, _, _ = fit_small_model(traj, n_delays=1)
    with pytest.raises(ShapeError):
        extend_feature(model, np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        extend_feature(model, np.full((1, 2), np.nan))


def test_far_query_out_of_distribution():
    traj = circle_flow(1.0, 2 * np.pi / 100, 100)
    model, _, _ = fit_small_model(traj, n_delays=1)
    with pytest.raises(OutOfDistributionError):
        extend_feature(model, np.full((1, 2), 1e9))


def test_continuity_under_small_perturbations():
    traj = circle_flow(1.0, 2 * np.pi / 200, 200)
    model, obs, _ = fit_small_model(traj, n_delays=1)
    rng = np.random.default_rng(0)
    query = traj.states[77:78]
    base = extend_feature(model, query)
    # crude Lipschitz estimate from the kernel's slope and feature scale
    scale = np.abs(model.feature_weights).max() / np.sqrt(model.v.min())
    lip = 10 * scale / model.sigma ** 2
    for eta in (1e-6, 1e-4, 1e-3):
        stepped = query + eta * rng.standard_normal(query.shape)
        got = extend_feature(model, stepped)
        assert abs(got - base) <= lip * eta + 1e-12


def test_model_round_trip(tmp_path):
    traj = circle_flow(1.0, 2 * np.pi / 120, 120)
    model, obs, _ = fit_small_model(traj, n_delays=1)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    query = traj.states[5:6]
    assert extend_feature(back, query) == extend_feature(model, query)
