import numpy as np
import pytest

from kcoherence.delay import (
    DelayConfig,
    SparseDistanceGraph,
    build_knn_graph,
    dense_distance_graph,
)
from kcoherence.errors import (
    ConfigurationError,
    DegenerateDataError,
    IsolatedSampleError,
)
from kcoherence.kernel import (
    FlatTuningWarning,
    bandwidth_function,
    bistochastic_factor,
    build_markov_factor,
    tune_bandwidth,
    variable_bandwidth_kernel,
)
from kcoherence.trajectory import StateTrajectory, circle_flow


def complete_graph_from_sq_dists(dense):
    """Complete SparseDistanceGraph from a dense squared-distance matrix."""
    n = dense.shape[0]
    return SparseDistanceGraph(
        n=n, k=n, n_delays=1, dt=1.0,
        indptr=np.arange(0, n * n + 1, n, dtype=np.int64),
        indices=np.tile(np.arange(n, dtype=np.int32), n),
        sq_dists=np.asarray(dense, dtype=float).ravel().copy(),
        symmetrized=True)


def one_distance_graph(n, c):
    dense = np.full((n, n), c * c)
    np.fill_diagonal(dense, 0.0)
    return complete_graph_from_sq_dists(dense)


class TestTuneBandwidth:
    def test_one_distance_dataset_matches_analytic_slope(self):
        n, c = 8, 0.7
        graph = one_distance_graph(n, c)
        tuning = tune_bandwidth(graph)

        # closed form: S(sigma) = w + (1-w) exp(-c^2/sigma^2), w = self-pair mass
        w = n / (n * n)
        fine = c * np.logspace(-3, 3, 4001)
        sums = w + (1 - w) * np.exp(-c * c / fine ** 2)
        log_e = 2 * np.log(fine)
        slopes = (np.log(sums)[2:] - np.log(sums)[:-2]) / (log_e[2:] - log_e[:-2])
        analytic_best = fine[1:-1][np.argmax(slopes)]

        grid_step = tuning.grid[1] / tuning.grid[0]
        assert tuning.grid[0] <= tuning.sigma_star <= tuning.grid[-1]
        ratio = tuning.sigma_star / analytic_best
        assert 1 / grid_step ** 1.5 <= ratio <= grid_step ** 1.5

        # the slope curve has a single bump
        s = tuning.slopes[1:-1]
        peak = np.argmax(s)
        assert np.all(np.diff(s[: peak + 1]) >= -1e-12)
        assert np.all(np.diff(s[peak:]) <= 1e-12)

    def test_circle_dimension_estimate(self):
        traj = circle_flow(1.0, 2 * np.pi / 2000, 2000)
        graph = build_knn_graph(traj, DelayConfig(1, 2 * np.pi / 2000), k=100)
        tuning = tune_bandwidth(graph)
        assert 0.8 <= tuning.m_est <= 1.2

    def test_identical_points_degenerate(self):
        dense = np.zeros((6, 6))
        graph = complete_graph_from_sq_dists(dense)
        with pytest.raises(DegenerateDataError):
            tune_bandwidth(graph)

    def test_flat_curve_falls_back_to_median(self):
        # a dominant cluster of coincident points with a single outlier:
        # the zero-distance mass swamps the kernel-sum curve, so its slope
        # never reaches the threshold
        n = 31
        dense = np.zeros((n, n))
        dense[:-1, -1] = dense[-1, :-1] = 2.5 ** 2
        graph = complete_graph_from_sq_dists(dense)
        with pytest.warns(FlatTuningWarning):
            tuning = tune_bandwidth(graph)
        assert tuning.fallback
        assert tuning.sigma_star == pytest.approx(2.5)


class TestBandwidthFunction:
    def test_two_identical_points(self):
        graph = complete_graph_from_sq_dists(np.zeros((2, 2)) + 0.0)
        rho = bandwidth_function(graph, sigma_bar=1.0, m=1.0)
        assert rho[0] == rho[1]
        # both rows sum to 2 (kernel value 1 for both pairs), so rho = 1
        assert rho[0] == pytest.approx(1.0)

    def test_single_neighbor_closed_form(self):
        # self pair plus one neighbor at d^2 = sigma_bar^2
        n = 2
        sigma_bar = 0.8
        dense = np.full((n, n), sigma_bar ** 2)
        np.fill_diagonal(dense, 0.0)
        graph = complete_graph_from_sq_dists(dense)
        rho = bandwidth_function(graph, sigma_bar, m=1.0)
        want = n / (1 + np.exp(-1.0))
        assert rho[0] == pytest.approx(want, rel=1e-14)

    def test_denser_region_gets_smaller_rho(self):
        rng = np.random.default_rng(1)
        tight = rng.normal(0.0, 0.05, size=(30, 2))
        loose = rng.normal(5.0, 1.0, size=(30, 2))
        pts = np.vstack([tight, loose])
        diff = pts[:, None, :] - pts[None, :, :]
        graph = complete_graph_from_sq_dists((diff ** 2).sum(-1))
        rho = bandwidth_function(graph, sigma_bar=0.5, m=2.0)
        assert rho[:30].mean() < rho[30:].mean()

        # brute-force oracle for a few rows
        kbar = np.exp(-(diff ** 2).sum(-1) / 0.25)
        for i in (0, 31, 59):
            want = (kbar[i].sum() / 60) ** (-1 / 2.0)
            assert rho[i] == pytest.approx(want, rel=1e-12)


class TestVariableBandwidthKernel:
    def test_diagonal_is_one(self):
        graph = one_distance_graph(5, 1.3)
        rho = np.full(5, 2.0)
        kern = variable_bandwidth_kernel(graph, 0.9, rho)
        mat = kern.to_csr().toarray()
        assert np.array_equal(np.diag(mat), np.ones(5))

    def test_constant_rho_reduces_to_fixed_gaussian(self):
        rng = np.random.default_rng(2)
        d = rng.uniform(0.1, 2.0, size=(8, 8))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        graph = complete_graph_from_sq_dists(d)
        kern = variable_bandwidth_kernel(graph, 0.7, np.ones(8))
        assert kern.kind == "base-gaussian"
        want = np.exp(-graph.sq_dists / (0.7 * 0.7))
        assert np.array_equal(kern.values, want)

    def test_closed_form_entry(self):
        dense = np.array([[0.0, 2.0], [2.0, 0.0]])
        graph = complete_graph_from_sq_dists(dense)
        kern = variable_bandwidth_kernel(graph, 1.0, np.array([1.0, 2.0]))
        mat = kern.to_csr().toarray()
        assert mat[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)


class TestBistochasticFactor:
    def test_two_by_two_hand_computation(self):
        a = 0.4
        dense_kappa = np.array([[1.0, a], [a, 1.0]])
        graph = complete_graph_from_sq_dists(np.zeros((2, 2)))
        kern = variable_bandwidth_kernel(graph, 1.0, np.ones(2))
        kern.values = dense_kappa.ravel().copy()
        factor = bistochastic_factor(kern)

        n = 2
        u = dense_kappa.sum(axis=1) / n
        v = (dense_kappa @ (1 / u)) / n
        g = dense_kappa / (n * u[:, None] * np.sqrt(v)[None, :])
        np.testing.assert_allclose(factor.u, u, rtol=1e-15)
        np.testing.assert_allclose(factor.v, v, rtol=1e-15)
        np.testing.assert_allclose(factor.g.toarray(), g, rtol=1e-15)

        k = factor.dense_kernel()
        np.testing.assert_allclose(k @ np.ones(2), np.ones(2), atol=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_markov_and_psd_invariants(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((60, 3))
        traj = StateTrajectory(pts, 0.1)
        graph = build_knn_graph(traj, DelayConfig(1, 0.1), k=12)
        result = build_markov_factor(graph)
        k = result.factor.dense_kernel()

        assert np.abs(k @ np.ones(60) - 1.0).max() < 1e-10
        assert np.abs(k - k.T).max() < 1e-12
        eigvals = np.linalg.eigvalsh(k)
        assert eigvals.min() >= -1e-10
        assert eigvals.max() == pytest.approx(1.0, abs=1e-8)

    def test_top_eigenvector_constant(self):
        traj = circle_flow(1.0, 2 * np.pi / 150, 150)
        graph = build_knn_graph(traj, DelayConfig(1, 2 * np.pi / 150), k=20)
        result = build_markov_factor(graph)
        k = result.factor.dense_kernel()
        vals, vecs = np.linalg.eigh(k)
        top = vecs[:, -1]
        cos = abs(top @ np.ones(150)) / (np.linalg.norm(top) * np.sqrt(150))
        assert vals[-1] == pytest.approx(1.0, abs=1e-8)
        assert cos > 1 - 1e-8

    def test_rejects_nonpositive_kernel(self):
        graph = one_distance_graph(3, 1.0)
        kern = variable_bandwidth_kernel(graph, 1.0, np.ones(3))
        kern.values = kern.values.copy()
        kern.values[1] = 0.0
        with pytest.raises(ConfigurationError):
            bistochastic_factor(kern)


def test_build_markov_factor_fixed_mode():
    traj = circle_flow(1.0, 2 * np.pi / 120, 120)
    graph = build_knn_graph(traj, DelayConfig(1, 2 * np.pi / 120), k=15)
    res = build_markov_factor(graph, variable_bandwidth=False)
    assert np.all(res.rho == 1.0)
    assert res.tuning_final is None
    assert res.sigma == res.sigma_base
    k = res.factor.dense_kernel()
    assert np.abs(k @ np.ones(120) - 1.0).max() < 1e-10


def test_build_markov_factor_explicit_sigma():
    traj = circle_flow(1.0, 2 * np.pi / 80, 80)
    graph = build_knn_graph(traj, DelayConfig(1, 2 * np.pi / 80), k=10)
    res = build_markov_factor(graph, sigma=0.5, dimension=1.0)
    assert res.sigma == 0.5
    assert res.m_est == 1.0
