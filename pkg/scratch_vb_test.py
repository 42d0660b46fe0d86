import sys
import time

import numpy as np

from kcoherence.delay import DelayConfig, build_knn_graph
from kcoherence.kernel import (
    bandwidth_function,
    bistochastic_factor,
    build_markov_factor,
    tune_bandwidth,
    variable_bandwidth_kernel,
)
from kcoherence.koopman import autocorrelation, make_observable
from kcoherence.spectral import leading_eigenpairs
from kcoherence.trajectory import integrate_l63
from scratch_dense_l63 import dense_delay_graph
from scratch_sigma_scan import pair_scan


def run(tag, graph, dt, dim, sigma="auto"):
    t0 = time.time()
    res = build_markov_factor(graph, sigma=sigma, dimension=dim)
    eig = leading_eigenpairs(res.factor, 10)
    print(f"{tag} dim={dim} sigma_base={res.sigma_base:.3f} sigma={res.sigma:.3f}"
          f" ({time.time()-t0:.0f}s)")
    print(f"  eigs={np.array2string(eig.eigenvalues[:8], precision=3)}")
    for j1, j2, l1, l2, om, amin in pair_scan(eig, dt):
        mark = " <== oscillation" if (om > 5 and amin > 0.2) else ""
        print(f"   ({j1},{j2}): l=({l1:.4f},{l2:.4f}) rel={(l1-l2)/max(l1,1e-300):.4f}"
              f" omega={om:.3f} min|a|={amin:.3f}{mark}")


def main():
    dt, q = 0.01, 800
    n = 8000
    mode = sys.argv[1] if len(sys.argv) > 1 else "dense"
    traj = integrate_l63([1.0, 1.0, 1.0], dt, n + q - 1, spinup=640.0)
    cfg = DelayConfig(q, dt)
    if mode == "dense":
        graph = dense_delay_graph(traj, cfg)
        for dim in (2.1, 3.0):
            run("DENSE var", graph, dt, dim)
    else:
        k = int(mode)
        graph = build_knn_graph(traj, cfg, k=k)
        for dim in (2.1,):
            run(f"KNN k={k} var", graph, dt, dim)
            run(f"KNN k={k} fixed-sweep", graph, dt, dim, sigma=7.5)


if __name__ == "__main__":
    main()
