import time

import numpy as np

from kcoherence.delay import DelayConfig, build_knn_graph, default_neighbors
from kcoherence.kernel import build_markov_factor
from kcoherence.koopman import autocorrelation, make_observable, pseudospectral_residual
from kcoherence.spectral import leading_eigenpairs, spectral_gaps
from kcoherence.trajectory import circle_flow, integrate_l63


def circle_criterion():
    t0 = time.time()
    n, dt = 20_000, 0.01
    traj = circle_flow(1.0, dt, n)
    cfg = DelayConfig(1, dt)
    k = default_neighbors(n)
    graph = build_knn_graph(traj, cfg, k=k)
    t1 = time.time()
    result = build_markov_factor(graph, variable_bandwidth=False)
    t2 = time.time()
    eig = leading_eigenpairs(result.factor, 6)
    t3 = time.time()
    obs = make_observable(eig, 1, 2, dt)
    q_max = 1000
    alpha = autocorrelation(obs.z, q_max)
    unb = alpha * n / (n - np.arange(q_max + 1))
    phase = np.exp(1j * obs.frequency * dt * np.arange(q_max + 1))
    _, tail = pseudospectral_residual(obs.z, obs.frequency, np.arange(q_max + 1), dt)
    t4 = time.time()
    print(f"CIRCLE n={n} k={k}")
    print(f"  eigs: {eig.eigenvalues}")
    print(f"  omega = {obs.frequency:.6f}  (err {abs(obs.frequency-1):.2e})")
    print(f"  max tail residual on [0,10]: {tail.max():.4f}")
    print(f"  max |alpha_unb - e^iwt|: {np.abs(unb - phase).max():.4f}")
    print(f"  max |alpha_raw - e^iwt|: {np.abs(alpha - phase).max():.4f}")
    print(f"  times: graph {t1-t0:.1f}s kernel {t2-t1:.1f}s eigs {t3-t2:.1f}s "
          f"diag {t4-t3:.1f}s total {t4-t0:.1f}s")


def l63_reduced(n_samples=16_000, q=800, knn=None, variable=True):
    t0 = time.time()
    dt = 0.01
    total = n_samples + q - 1
    traj = integrate_l63([1.0, 1.0, 1.0], dt, total, spinup=640.0)
    t1 = time.time()
    cfg = DelayConfig(q, dt)
    k = knn or default_neighbors(n_samples)
    graph = build_knn_graph(traj, cfg, k=k)
    t2 = time.time()
    result = build_markov_factor(graph, variable_bandwidth=variable)
    t3 = time.time()
    eig = leading_eigenpairs(result.factor, 21)
    t4 = time.time()
    gaps = spectral_gaps(eig, 1, 2, q * dt)
    obs = make_observable(eig, 1, 2, dt)
    q_max = 1000
    alpha = autocorrelation(obs.z, q_max)
    t5 = time.time()
    print(f"L63 N={n_samples} Q={q} k={k} variable={variable}")
    print(f"  sigma_base={result.sigma_base:.4f} m={result.m_est:.3f} sigma={result.sigma:.4f}")
    print(f"  eigs[0:6]: {np.array2string(eig.eigenvalues[:6], precision=4)}")
    print(f"  lambda1={eig.eigenvalues[1]:.4f} lambda2={eig.eigenvalues[2]:.4f} "
          f"rel diff={(eig.eigenvalues[1]-eig.eigenvalues[2])/eig.eigenvalues[1]:.4f}")
    print(f"  top gap={eig.eigenvalues[0]-eig.eigenvalues[1]:.4f} gamma={gaps.gamma:.4f} "
          f"delta={gaps.delta:.5f} delta_rel={gaps.delta_rel:.5f} eta={gaps.eta:.4f}")
    print(f"  omega={obs.frequency:.4f}")
    print(f"  min |alpha| on [0,10] = {np.abs(alpha).min():.4f}")
    print(f"  times: traj {t1-t0:.0f}s graph {t2-t1:.0f}s kernel {t3-t2:.0f}s "
          f"eigs {t4-t3:.0f}s diag {t5-t4:.0f}s total {t5-t0:.0f}s")


if __name__ == "__main__":
    circle_criterion()
    print()
    l63_reduced()
