"""Shift-operator and finite-difference-generator diagnostics.

Functions here operate on per-sample values of observables: real or complex
vectors of length n under the empirical inner product

    <f, g> = (1/n) * sum_i conj(f[i]) * g[i].

The q-step shift stands in for evolution by q * dt time units (with a
zero-padded tail, so it is nilpotent rather than unitary), and the
finite-difference generator is (shift - identity) / dt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .delay import DelayConfig, SparseDistanceGraph, dense_distance_graph
from .errors import (
    ConfigurationError,
    DegeneratePairError,
    EstimationError,
)
from .spectral import EigenDecomposition, GapReport
from .trajectory import StateTrajectory, VectorField


class NonOrthogonalPairWarning(UserWarning):
    """The observable and its conjugate are not empirically orthogonal."""


def empirical_inner(f: np.ndarray, g: np.ndarray) -> complex:
    """Empirical inner product, conjugate-linear in the first argument."""
    return complex(np.vdot(f, g) / f.shape[0])


def empirical_norm(f: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(f) ** 2)))


def shift(f: np.ndarray, q: int) -> np.ndarray:
    """q-step shift with zero-padded tail: out[i] = f[i+q] for i <= n-1-q."""
    n = f.shape[0]
    if not 0 <= q <= n:
        raise ConfigurationError(f"shift step must be in [0, {n}], got {q}")
    out = np.zeros_like(f)
    if q < n:
        out[: n - q] = f[q:]
    return out


def fd_generator(f: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference generator (shift(f, 1) - f) / dt.

    The last entry is -f[n-1]/dt, inherited from the zero-padded shift.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    return (shift(f, 1) - f) / dt


def generator_frequency(phi: np.ndarray, psi: np.ndarray, dt: float) -> float:
    """One-sided frequency estimate <psi, fd_generator(phi)>.

    Carries O(dt) discretization error plus an O(1/(n dt)) boundary term
    from the zero-padded tail.
    """
    return float(np.dot(np.asarray(psi, float),
                        fd_generator(np.asarray(phi, float), dt)) / phi.shape[0])


def skew_generator_frequency(phi: np.ndarray, psi: np.ndarray, dt: float) -> float:
    """Skew-symmetrized frequency of z = (phi + i psi)/sqrt(2).

    Returns (<phi, V psi> - <psi, V phi>) / 2, the real part of <z, V z>/i,
    which applies only the skew part of the finite-difference generator: the
    faithful discretization of a generator that is exactly skew-adjoint in
    the continuum. The oscillatory and boundary artifacts of the two
    one-sided estimates cancel, and the estimate is exactly antisymmetric
    under swapping (phi, psi) and under sign flips. The sign is oriented so
    that a coherent z evolves like exp(+i omega t).
    """
    return (generator_frequency(psi, phi, dt)
            - generator_frequency(phi, psi, dt)) / 2.0


@dataclass
class CoherentObservable:
    """Complex observable z = (phi + i psi)/sqrt(2) built from an eigenpair.

    ``eig_phi`` and ``eig_psi`` are the kernel eigenvalues of the stored
    components; ``frequency`` is nonnegative by the orientation convention
    (psi is negated when the raw estimate comes out negative).
    """

    z: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    phi_index: int
    psi_index: int
    eig_phi: float
    eig_psi: float
    frequency: float
    dt: float
    flipped: bool = False

    @property
    def n(self) -> int:
        return self.z.shape[0]


def make_observable(eig: EigenDecomposition, j1: int, j2: int,
                    dt: float) -> CoherentObservable:
    """Build the coherent observable from a consecutive eigenvector pair.

    The frequency comes from the skew-symmetrized finite-difference
    generator, so |frequency| does not depend on the order of (j1, j2).
    If the raw value is negative, psi is replaced by -psi, which flips the
    sign exactly.
    """
    ell = eig.n_pairs
    if not (0 <= j1 < ell and 0 <= j2 < ell):
        raise ConfigurationError(f"pair ({j1}, {j2}) outside computed range")
    if abs(j1 - j2) != 1:
        raise ConfigurationError(
            f"pair ({j1}, {j2}) is not consecutive in the sorted spectrum")
    lam1, lam2 = float(eig.eigenvalues[j1]), float(eig.eigenvalues[j2])
    if lam1 <= 0 or lam2 <= 0:
        raise DegeneratePairError(
            f"pair eigenvalues ({lam1}, {lam2}) must be positive")

    phi = eig.eigenvectors[:, j1].copy()
    psi = eig.eigenvectors[:, j2].copy()
    omega = skew_generator_frequency(phi, psi, dt)
    flipped = omega < 0
    if flipped:
        psi = -psi
        omega = -omega
    z = (phi + 1j * psi) / np.sqrt(2.0)
    return CoherentObservable(z=z, phi=phi, psi=psi, phi_index=j1, psi_index=j2,
                              eig_phi=lam1, eig_psi=lam2, frequency=omega,
                              dt=dt, flipped=flipped)


def autocorrelation(z: np.ndarray, q_max: int) -> np.ndarray:
    """Empirical autocorrelation alpha[q] = <z, shift(z, q)> for q = 0..q_max.

    Keeps the 1/n normalization of the zero-padded shift, so |alpha[q]|
    cannot exceed one (Cauchy-Schwarz).
    """
    n = z.shape[0]
    if not 0 <= q_max < n:
        raise ConfigurationError(f"q_max must be in [0, {n - 1}], got {q_max}")
    out = np.empty(q_max + 1, dtype=complex)
    for q in range(q_max + 1):
        out[q] = np.vdot(z[: n - q], z[q:]) / n
    return out


def decomposition_diagnostics(z: np.ndarray, q: int) -> tuple[complex, complex, float]:
    """Coefficients of shift(z, q) against the frame {z, conj(z)}.

    Returns (alpha, beta, r_norm) with alpha = <z, U^q z>,
    beta = <conj(z), U^q z>, and r_norm the empirical norm of the residual
    orthogonal to both. When {z, conj(z)} are orthonormal the Pythagorean
    identity |alpha|^2 + |beta|^2 + r_norm^2 = ||U^q z||^2 holds.
    """
    n = z.shape[0]
    cross = empirical_inner(z, np.conj(z))
    if abs(cross) > 1e-6:
        warnings.warn(
            f"<z, conj(z)> = {abs(cross):.3g} deviates from 0; "
            "the pair is not an orthonormal frame (finite-sample effect)",
            NonOrthogonalPairWarning)
    uz = shift(z, q)
    alpha = empirical_inner(z, uz)
    beta = empirical_inner(np.conj(z), uz)
    r = uz - alpha * z - beta * np.conj(z)
    return alpha, beta, empirical_norm(r)


# -- bound constants and bound curves ------------------------------------------

@dataclass
class BoundConstants:
    """Empirical estimates of the constants entering the coherence bounds.

    ``c1 = 2 * h_c1 * d2_sup`` and ``c2 = 2 * h_c1 * d2_c1`` where ``h_c1``
    is the C^1 norm of the kernel shape function, ``d2_sup`` the largest
    plain squared distance over stored pairs, and ``d2_c1`` adds the largest
    finite-difference directional derivative of the squared distance along
    the trajectory. ``provenance`` records how each field was obtained
    (analytic, empirical, or user).
    """

    c1: float
    c2: float
    vfield_norm: float
    h_c1: float
    d2_sup: float
    d2_c1: float
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c1": self.c1, "c2": self.c2, "vfield_norm": self.vfield_norm,
            "h_c1": self.h_c1, "d2_sup": self.d2_sup, "d2_c1": self.d2_c1,
            "provenance": dict(self.provenance),
        }


def _max_over_entries(y: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                      row_offset: int = 0, chunk: int = 1 << 20) -> float:
    best = 0.0
    for start in range(0, rows.size, chunk):
        r = rows[start:start + chunk] + row_offset
        c = cols[start:start + chunk]
        diff = y[r] - y[c]
        best = max(best, float(np.einsum("ij,ij->i", diff, diff).max()))
    return best


def estimate_constants(traj: StateTrajectory, graph: SparseDistanceGraph,
                       sigma: float, rho: np.ndarray | None = None,
                       field_def: VectorField | None = None,
                       vfield_norm: float | None = None) -> BoundConstants:
    """Estimate the constants of the coherence bounds from data.

    The kernel shape is Gaussian; with per-sample bandwidths the steepest
    effective shape over the attained argument range is used, giving
    h_c1 = 1 + 1/(sigma^2 * min rho_i rho_j). Distance suprema are maxima
    over the stored graph pairs and are lower-bound estimates of the true
    suprema; reports based on them are marked as estimated.

    The vector-field norm is the largest sampled speed: evaluated from
    ``field_def`` when given, otherwise from finite-difference velocities
    (validated against central differences). An explicit ``vfield_norm``
    overrides both.
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    y = traj.states
    rows = graph.row_indices()
    cols = graph.indices.astype(np.int64)
    provenance = {"h_c1": "analytic", "d2_sup": "empirical", "d2_c1": "empirical"}

    if rho is None:
        h_c1 = 1.0 + 1.0 / (sigma * sigma)
    else:
        rho = np.asarray(rho, dtype=float)
        min_scale = float((rho[rows] * rho[cols]).min())
        h_c1 = 1.0 + 1.0 / (sigma * sigma * min_scale)

    d2_sup = _max_over_entries(y, rows, cols)

    # directional derivative along the flow: advance the first index by one
    ok = rows + 1 <= traj.n_samples - 1
    r_ok, c_ok = rows[ok], cols[ok]
    fd_best = 0.0
    chunk = 1 << 20
    for start in range(0, r_ok.size, chunk):
        r = r_ok[start:start + chunk]
        c = c_ok[start:start + chunk]
        d_now = np.einsum("ij,ij->i", y[r] - y[c], y[r] - y[c])
        d_nxt = np.einsum("ij,ij->i", y[r + 1] - y[c], y[r + 1] - y[c])
        fd_best = max(fd_best, float(np.abs(d_nxt - d_now).max() / traj.dt))
    d2_c1 = d2_sup + fd_best

    if vfield_norm is not None:
        provenance["vfield_norm"] = "user"
        vnorm = float(vfield_norm)
    elif field_def is not None:
        speeds = np.array([np.linalg.norm(field_def.evaluate(s)) for s in y])
        vnorm = float(speeds.max())
        provenance["vfield_norm"] = "analytic"
    else:
        vel = (y[1:] - y[:-1]) / traj.dt
        speeds = np.linalg.norm(vel, axis=1)
        central = (y[2:] - y[:-2]) / (2 * traj.dt)
        denom = np.maximum(np.linalg.norm(central, axis=1), 1e-300)
        rel = np.linalg.norm(vel[:-1] - central, axis=1) / denom
        if np.median(rel) > 0.1:
            raise EstimationError(
                "sampling too coarse for finite-difference velocities "
                f"(median residual {np.median(rel):.3g})")
        vnorm = float(speeds.max())
        provenance["vfield_norm"] = "empirical"

    return BoundConstants(
        c1=2.0 * h_c1 * d2_sup, c2=2.0 * h_c1 * d2_c1, vfield_norm=vnorm,
        h_c1=h_c1, d2_sup=d2_sup, d2_c1=d2_c1, provenance=provenance)


@dataclass
class BoundCurves:
    """Coherence-bound curves on a time grid.

    ``s`` bounds the residual orthogonal to the observable's plane;
    ``big_s`` bounds the conjugate leakage; ``eps_tilde = s + sqrt(big_s)``
    and ``eps = s + 3 sqrt(big_s)`` bound the distance of the evolved
    observable from its phase-rotated self. All four are non-decreasing.
    """

    t: np.ndarray
    s: np.ndarray
    big_s: np.ndarray
    eps_tilde: np.ndarray
    eps: np.ndarray
    unbounded: bool = False


def coherence_bounds(gaps: GapReport, constants: BoundConstants,
                     t_grid: np.ndarray) -> BoundCurves:
    """Evaluate the spectral coherence bounds on a time grid.

        s(t)     = (c1 t / T + 3 delta) / gamma
        S(t)     = (c2 |V| (1 + delta_rel) / lam) * integral_0^t s(u) du
                 = (c2 |V| (1 + delta_rel) / lam) * (c1 t^2 / (2T) + 3 delta t) / gamma

    using the exact antiderivative of s. A zero gap is reported as
    unbounded (infinite curves), not as an exception.
    """
    t = np.asarray(t_grid, dtype=float)
    if (t < 0).any():
        raise ConfigurationError("bound times must be nonnegative")
    if not gaps.window > 0:
        raise ConfigurationError("bounds need a positive embedding window")
    if gaps.gamma <= 0:
        inf = np.full(t.shape, np.inf)
        return BoundCurves(t=t, s=inf, big_s=inf, eps_tilde=inf, eps=inf,
                           unbounded=True)

    big_t = gaps.window
    s = (constants.c1 * t / big_t + 3.0 * gaps.delta) / gaps.gamma
    prefactor = constants.c2 * constants.vfield_norm * (1.0 + gaps.delta_rel) / gaps.lam
    big_s = prefactor * (constants.c1 * t * t / (2.0 * big_t)
                         + 3.0 * gaps.delta * t) / gaps.gamma
    root = np.sqrt(big_s)
    return BoundCurves(t=t, s=s, big_s=big_s,
                       eps_tilde=s + root, eps=s + 3.0 * root)


def pseudospectral_residual(z: np.ndarray, omega: float, q_grid,
                            dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Residuals ||shift(z, q) - exp(i omega q dt) z|| over the lag grid.

    Returns the plain empirical-norm residual and a tail-corrected variant
    restricted to i <= n-1-q (the zero-padded tail otherwise contributes
    about q/n of spurious mass), normalized over the surviving range.
    """
    n = z.shape[0]
    q_grid = np.asarray(q_grid, dtype=int)
    full = np.empty(q_grid.size)
    tail = np.empty(q_grid.size)
    for pos, q in enumerate(q_grid):
        if not 0 <= q <= n:
            raise ConfigurationError(f"lag {q} outside [0, {n}]")
        phase = np.exp(1j * omega * q * dt)
        diff_full = shift(z, q) - phase * z
        full[pos] = empirical_norm(diff_full)
        if q < n:
            diff = z[q:] - phase * z[: n - q]
            tail[pos] = float(np.sqrt(np.mean(np.abs(diff) ** 2)))
        else:
            tail[pos] = 0.0
    return full, tail


def commutator_norm(traj: StateTrajectory, cfg: DelayConfig, q: int,
                    sigma: float | None = None, max_samples: int = 2000) -> float:
    """Empirical operator norm of the commutator of shift and kernel operator.

    Builds the dense fixed-bandwidth Gaussian kernel operator on the sample
    set (entries h(d2) / n) and the dense q-step shift, and returns the
    largest singular value of their commutator. Sampling is uniform, so the
    empirical-measure operator norm equals the spectral norm.

    Dense-only validation path: the embedded sample count must not exceed
    ``max_samples``.
    """
    n = cfg.n_embedded(traj)
    if n > max_samples:
        raise ConfigurationError(
            f"commutator validation limited to {max_samples} samples, got {n}")
    if not 0 <= q <= n:
        raise ConfigurationError(f"shift step must be in [0, {n}], got {q}")
    graph = dense_distance_graph(traj, cfg, max_samples=max_samples)
    d2 = graph.sq_dists.reshape(n, n)
    if sigma is None:
        off = d2[~np.eye(n, dtype=bool)]
        sigma = float(np.sqrt(np.median(off[off > 0])))
    k = np.exp(-d2 / (sigma * sigma)) / n

    uk = np.zeros_like(k)
    uk[: n - q] = k[q:]
    ku = np.zeros_like(k)
    ku[:, q:] = k[:, : n - q]
    return float(np.linalg.norm(uk - ku, 2))


# -- report assembly ------------------------------------------------------------

@dataclass
class CoherenceReport:
    """Lag-resolved coherence diagnostics for one observable.

    Arrays are indexed by lag q = 0 .. q_max; times are t = q * dt. The
    ``alpha_unbiased`` column rescales the autocorrelation by n/(n-q); it
    is a practical diagnostic, not part of the estimator conventions.
    """

    t: np.ndarray
    alpha: np.ndarray
    alpha_unbiased: np.ndarray
    beta: np.ndarray
    r_norm: np.ndarray
    residual: np.ndarray
    residual_tail: np.ndarray
    bounds: BoundCurves
    gaps: GapReport
    constants: BoundConstants
    frequency: float
    frequency_onesided: float
    estimated_constants: bool = True

    def summary(self) -> dict:
        return {
            "frequency": self.frequency,
            "frequency_onesided": self.frequency_onesided,
            "gaps": self.gaps.to_dict(),
            "constants": self.constants.to_dict(),
            "estimated_constants": self.estimated_constants,
            "alpha_abs_min": float(np.abs(self.alpha).min()),
            "lags": int(self.t.size - 1),
        }


def build_coherence_report(obs: CoherentObservable, gaps: GapReport,
                           constants: BoundConstants, q_max: int,
                           with_decomposition: bool = True) -> CoherenceReport:
    """Assemble the full lag-resolved report for a coherent observable."""
    n = obs.n
    if not 0 <= q_max < n:
        raise ConfigurationError(f"q_max must be in [0, {n - 1}], got {q_max}")
    dt = obs.dt
    q_grid = np.arange(q_max + 1)
    t = q_grid * dt

    alpha = autocorrelation(obs.z, q_max)
    alpha_unbiased = alpha * n / (n - q_grid)
    residual, residual_tail = pseudospectral_residual(obs.z, obs.frequency,
                                                      q_grid, dt)
    bounds = coherence_bounds(gaps, constants, t)

    beta = np.zeros(q_max + 1, dtype=complex)
    r_norm = np.zeros(q_max + 1)
    if with_decomposition:
        conj_z = np.conj(obs.z)
        for q in q_grid:
            uz = shift(obs.z, q)
            b = empirical_inner(conj_z, uz)
            r = uz - alpha[q] * obs.z - b * conj_z
            beta[q] = b
            r_norm[q] = empirical_norm(r)

    onesided = generator_frequency(obs.phi, obs.psi, dt)
    user_constants = all(p == "user" for p in constants.provenance.values())
    return CoherenceReport(
        t=t, alpha=alpha, alpha_unbiased=alpha_unbiased, beta=beta,
        r_norm=r_norm, residual=residual, residual_tail=residual_tail,
        bounds=bounds, gaps=gaps, constants=constants,
        frequency=obs.frequency, frequency_onesided=onesided,
        estimated_constants=not user_constants)
