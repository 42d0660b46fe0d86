import numpy as np
import pytest
from sklearn.base import clone

from kcoherence.estimator import KernelCoherence
from kcoherence.trajectory import circle_flow


@pytest.fixture(scope="module")
def fitted():
    traj = circle_flow(1.0, 2 * np.pi / 400, 400)
    est = KernelCoherence(n_delays=1, dt=traj.dt, n_neighbors=40,
                          n_eigenpairs=6, random_state=0)
    return est.fit(traj.states), traj


def test_get_set_params_round_trip():
    est = KernelCoherence(n_delays=5, sigma=0.3)
    params = est.get_params()
    assert params["n_delays"] == 5 and params["sigma"] == 0.3
    est2 = clone(est)
    assert est2.get_params() == params


def test_fit_attributes(fitted):
    est, traj = fitted
    assert est.eigenvalues_[0] == pytest.approx(1.0, abs=1e-8)
    assert est.eigenvalues_.shape == (6,)
    assert est.eigenvectors_.shape == (400, 6)
    assert est.frequency_ >= 0
    assert abs(est.frequency_ - 1.0) < 0.02
    assert est.gaps_.pair == (1, 2)
    assert est.n_features_in_ == 2


def test_transform_matches_in_sample(fitted):
    est, traj = fitted
    windows = traj.states[:10, None, :]
    got = est.transform(windows)
    assert np.abs(got - est.observable_.z[:10]).max() < 1e-3


def test_transform_single_window(fitted):
    est, traj = fitted
    got = est.transform(traj.states[3:4])
    assert got.shape == (1,)


def test_autocorrelation_and_score(fitted):
    est, _ = fitted
    alpha = est.autocorrelation(20)
    assert abs(alpha[0] - 1.0) < 1e-12
    assert 0.0 < est.score() <= 1.0 + 1e-10


def test_unfitted_transform_raises():
    from sklearn.exceptions import NotFittedError
    est = KernelCoherence()
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((1, 1, 2)))


def test_explicit_pair_and_seed_determinism():
    traj = circle_flow(2.0, 0.01, 500)
    a = KernelCoherence(n_delays=3, dt=0.01, n_neighbors=30, n_eigenpairs=5,
                        pair=(1, 2), random_state=7).fit(traj)
    b = KernelCoherence(n_delays=3, dt=0.01, n_neighbors=30, n_eigenpairs=5,
                        pair=(1, 2), random_state=7).fit(traj)
    assert np.array_equal(a.eigenvalues_, b.eigenvalues_)
    assert np.array_equal(a.observable_.z, b.observable_.z)
