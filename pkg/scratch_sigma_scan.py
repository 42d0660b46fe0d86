import sys
import time

import numpy as np

from kcoherence.delay import DelayConfig
from kcoherence.kernel import bistochastic_factor, variable_bandwidth_kernel
from kcoherence.koopman import autocorrelation, make_observable
from kcoherence.spectral import leading_eigenpairs
from kcoherence.trajectory import integrate_l63
from scratch_dense_l63 import dense_delay_graph


def pair_scan(eig, dt, q_probe=1000):
    """Find the consecutive pair whose observable is most oscillatory."""
    rows = []
    for j in range(1, min(8, eig.n_pairs - 1)):
        obs = make_observable(eig, j, j + 1, dt)
        alpha = autocorrelation(obs.z, q_probe)
        rows.append((j, j + 1, eig.eigenvalues[j], eig.eigenvalues[j + 1],
                     obs.frequency, np.abs(alpha).min()))
    return rows


def main():
    dt, q = 0.01, 800
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 8000
    traj = integrate_l63([1.0, 1.0, 1.0], dt, n + q - 1, spinup=640.0)
    cfg = DelayConfig(q, dt)
    t0 = time.time()
    graph = dense_delay_graph(traj, cfg)
    print(f"dense graph {time.time()-t0:.0f}s")

    for sigma in (3.0, 4.5, 6.0, 7.5, 9.2, 12.0):
        t0 = time.time()
        kern = variable_bandwidth_kernel(graph, sigma, np.ones(graph.n))
        factor = bistochastic_factor(kern)
        eig = leading_eigenpairs(factor, 10)
        print(f"sigma={sigma}: eigs={np.array2string(eig.eigenvalues[:8], precision=3)}"
              f" ({time.time()-t0:.0f}s)")
        for j1, j2, l1, l2, om, amin in pair_scan(eig, dt):
            mark = " <== oscillation" if (om > 5 and amin > 0.2) else ""
            print(f"   pair ({j1},{j2}): l=({l1:.4f},{l2:.4f}) "
                  f"rel={(l1-l2)/l1:.4f} omega={om:.3f} min|a|={amin:.3f}{mark}")


if __name__ == "__main__":
    main()
