"""Out-of-sample evaluation of the coherent feature at new states.

A fitted model evaluates the continuous representative of the coherent
observable at any point with a known delay history: the query's kernel row
against the training data is built with the stored bandwidths, normalized
with the stored bistochastic vectors (the query-side row sum is computed on
the fly), and contracted against the eigenvector combination phi/eig_phi +
i psi/eig_psi. Evaluating at a training point reproduces the training value
of the observable up to the eigensolver residual, provided the training
kernel used full rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .delay import DelayConfig
from .errors import ConfigurationError, DataIOError, OutOfDistributionError, ShapeError
from .kernel import MarkovKernelResult
from .koopman import CoherentObservable
from .trajectory import StateTrajectory

#: query kernel row sums below this are treated as out of distribution
_ROW_SUM_FLOOR = 1e-300


@dataclass
class FeatureModel:
    """Everything needed to evaluate the coherent feature at new points.

    ``feature_weights`` is the precomputed contraction G^T (phi/eig_phi +
    i psi/eig_psi), so a query costs one kernel row against the training
    samples.
    """

    states: np.ndarray
    n_delays: int
    dt: float
    sigma_base: float
    m_est: float
    sigma: float
    rho: np.ndarray
    u: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    eig_phi: float
    eig_psi: float
    frequency: float
    feature_weights: np.ndarray

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def build_feature_model(traj: StateTrajectory, kernel_result: MarkovKernelResult,
                        obs: CoherentObservable) -> FeatureModel:
    """Package a fitted pipeline into an out-of-sample evaluator."""
    factor = kernel_result.factor
    if obs.eig_phi <= 0 or obs.eig_psi <= 0:
        raise ConfigurationError("feature model needs positive eigenvalues")
    combo = obs.phi / obs.eig_phi + 1j * obs.psi / obs.eig_psi
    weights = factor.g.T @ combo
    return FeatureModel(
        states=traj.states, n_delays=kernel_result.kernel.graph.n_delays,
        dt=kernel_result.kernel.graph.dt, sigma_base=kernel_result.sigma_base,
        m_est=kernel_result.m_est, sigma=kernel_result.sigma,
        rho=kernel_result.rho, u=factor.u, v=factor.v,
        phi=obs.phi, psi=obs.psi, eig_phi=obs.eig_phi, eig_psi=obs.eig_psi,
        frequency=obs.frequency, feature_weights=weights)


def _query_sq_dists(model: FeatureModel, query: np.ndarray) -> np.ndarray:
    """Delay-averaged squared distances from the query window to training data."""
    q = model.n_delays
    n = model.n
    y = model.states
    acc = np.zeros(n)
    for step in range(q):
        diff = y[step:step + n] - query[step]
        acc += np.einsum("ij,ij->i", diff, diff)
    return acc / q


def extend_feature(model: FeatureModel, query) -> complex:
    """Evaluate the coherent feature at a new delay window.

    ``query`` must hold exactly the model's number of delays of consecutive
    observed states, one per row, at the training sampling interval. Uses
    full (untruncated) kernel sums on the query side.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.ndim == 1:
        query = query[:, None]
    if query.shape != (model.n_delays, model.dim):
        raise ShapeError(
            f"query must have shape ({model.n_delays}, {model.dim}), "
            f"got {query.shape}")
    if not np.isfinite(query).all():
        raise ShapeError("query contains non-finite values")

    d2 = _query_sq_dists(model, query)
    base_row_sum = np.mean(np.exp(-d2 / (model.sigma_base ** 2)))
    if base_row_sum <= _ROW_SUM_FLOOR:
        raise OutOfDistributionError(
            "query base-kernel row sum underflowed; the point is too far "
            "from the training data")
    rho_q = base_row_sum ** (-1.0 / model.m_est)

    kappa_q = np.exp(-d2 / (model.sigma ** 2 * rho_q * model.rho))
    u_q = float(np.mean(kappa_q))
    if u_q <= _ROW_SUM_FLOOR:
        raise OutOfDistributionError(
            "query kernel row sum underflowed; the point is too far from "
            "the training data")
    g_q = kappa_q / (model.n * u_q * np.sqrt(model.v))
    return complex(g_q @ model.feature_weights / np.sqrt(2.0))


def extend_feature_batch(model: FeatureModel, queries) -> np.ndarray:
    """Evaluate a stack of query windows, shape (m, Q, dim)."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 2:
        queries = queries[None]
    return np.array([extend_feature(model, w) for w in queries])


# -- serialization --------------------------------------------------------------
#
# model.json carries scalars and the name of an .npz sidecar with the arrays.

_ARRAY_FIELDS = ("states", "rho", "u", "v", "phi", "psi", "feature_weights")
_SCALAR_FIELDS = ("n_delays", "dt", "sigma_base", "m_est", "sigma",
                  "eig_phi", "eig_psi", "frequency")


def save_model(model: FeatureModel, path) -> None:
    path = Path(path)
    arrays_name = path.stem + ".arrays.npz"
    np.savez(path.with_name(arrays_name),
             **{name: getattr(model, name) for name in _ARRAY_FIELDS})
    meta = {name: getattr(model, name) for name in _SCALAR_FIELDS}
    meta["arrays"] = arrays_name
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FeatureModel:
    path = Path(path)
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read model {path}: {exc}") from exc
    arrays_path = path.with_name(meta["arrays"])
    try:
        with np.load(arrays_path) as arrays:
            data = {name: arrays[name] for name in _ARRAY_FIELDS}
    except (OSError, KeyError) as exc:
        raise DataIOError(f"cannot read model arrays {arrays_path}: {exc}") from exc
    kwargs = {name: meta[name] for name in _SCALAR_FIELDS}
    kwargs["n_delays"] = int(kwargs["n_delays"])
    return FeatureModel(**data, **kwargs)
