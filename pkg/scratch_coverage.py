import sys
import time

import numpy as np

from kcoherence.delay import DelayConfig, build_knn_graph
from kcoherence.kernel import bistochastic_factor, variable_bandwidth_kernel, tune_bandwidth
from kcoherence.spectral import leading_eigenpairs
from kcoherence.trajectory import integrate_l63
from scratch_sigma_scan import pair_scan


def main():
    dt = float(sys.argv[1]) if len(sys.argv) > 1 else 0.04
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 16_000
    k = int(sys.argv[3]) if len(sys.argv) > 3 else 4000
    q = int(round(8.0 / dt))
    traj = integrate_l63([1.0, 1.0, 1.0], dt, n + q - 1, spinup=640.0)
    cfg = DelayConfig(q, dt)
    t0 = time.time()
    graph = build_knn_graph(traj, cfg, k=k)
    print(f"graph n={graph.n} nnz={graph.nnz} ({time.time()-t0:.0f}s) "
          f"span={n*dt:.0f} time units")
    tune = tune_bandwidth(graph)
    print(f"tuned sigma_base={tune.sigma_star:.3f} m={tune.m_est:.2f}")

    for sigma in (6.5, 7.5, 8.5, tune.sigma_star):
        t0 = time.time()
        kern = variable_bandwidth_kernel(graph, sigma, np.ones(graph.n))
        factor = bistochastic_factor(kern)
        eig = leading_eigenpairs(factor, 10)
        print(f"sigma={sigma:.3f}: eigs={np.array2string(eig.eigenvalues[:8], precision=3)}"
              f" ({time.time()-t0:.0f}s)")
        for j1, j2, l1, l2, om, amin in pair_scan(eig, dt, q_probe=min(1000, int(10 / dt))):
            mark = " <== oscillation" if (om > 5 and amin > 0.2) else ""
            print(f"   ({j1},{j2}): l=({l1:.4f},{l2:.4f}) rel={(l1-l2)/l1:.4f} "
                  f"omega={om:.3f} min|a|={amin:.3f}{mark}")


if __name__ == "__main__":
    main()
