"""Delay-coordinate squared distances and the sparse k-nearest-neighbor graph.

The delay-averaged squared distance between two samples i and j is the mean
of the plain squared distances over a window of Q consecutive samples:

    sq_dist(i, j) = (1/Q) * sum_{q=0}^{Q-1} ||y[i+q] - y[j+q]||^2

Computing all pairs directly costs O(n^2 Q d). The graph builder instead
advances whole rows with the sliding-diagonal recursion

    S(i+1, j+1) = S(i, j) - D(i, j) + D(i+Q, j+Q)

where D is the plain squared distance, restarting from a direct sum every
1024 rows so cancellation error along each diagonal stays bounded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataIOError
from .trajectory import StateTrajectory

# rows recomputed by direct summation, bounding recursion depth per diagonal
_RESTART_PERIOD = 1024


@dataclass(frozen=True)
class DelayConfig:
    """Number of delays and sampling interval; the window is their product."""

    n_delays: int
    dt: float

    def __post_init__(self):
        if self.n_delays < 1:
            raise ConfigurationError("n_delays must be >= 1")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")

    @property
    def window(self) -> float:
        return self.n_delays * self.dt

    def n_embedded(self, traj: StateTrajectory) -> int:
        n = traj.n_samples - self.n_delays + 1
        if n < 1:
            raise ConfigurationError(
                f"trajectory of {traj.n_samples} samples is too short for "
                f"{self.n_delays} delays")
        return n


@dataclass
class SparseDistanceGraph:
    """Per-sample nearest neighbors under the delay-averaged squared distance.

    Stored in CSR layout. Row i always contains i itself with distance zero.
    After symmetrization the support and the stored values are symmetric, so
    rows may hold more than ``k`` entries (union of neighbor sets).
    """

    n: int
    k: int
    n_delays: int
    dt: float
    indptr: np.ndarray
    indices: np.ndarray
    sq_dists: np.ndarray
    symmetrized: bool

    @property
    def window(self) -> float:
        return self.n_delays * self.dt

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry (same length as ``indices``)."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def neighbor_ids(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def row_sq_dists(self, i: int) -> np.ndarray:
        return self.sq_dists[self.indptr[i]:self.indptr[i + 1]]

    def to_csr(self) -> sp.csr_matrix:
        """Squared distances as a scipy CSR matrix (shares the data arrays)."""
        return sp.csr_matrix(
            (self.sq_dists, self.indices, self.indptr), shape=(self.n, self.n))


def delay_sq_distance(traj: StateTrajectory, cfg: DelayConfig,
                      i: int, j: int) -> float:
    """Direct evaluation of the delay-averaged squared distance.

    Symmetric in (i, j) exactly: the summation order over the window and
    over coordinates is identical for both argument orders.
    """
    q = cfg.n_delays
    n = cfg.n_embedded(traj)
    if not (0 <= i < n and 0 <= j < n):
        raise ConfigurationError(
            f"indices ({i}, {j}) outside embeddable range [0, {n - 1}]")
    y = traj.states
    diff = y[i:i + q] - y[j:j + q]
    return float(np.sum(diff * diff) / q)


def default_neighbors(n: int) -> int:
    """Default neighbor count: max(ceil(sqrt(n)), 50), capped below n."""
    return min(max(int(np.ceil(np.sqrt(n))), 50), n - 1)


def _plain_sq_rows(y: np.ndarray, i: int, length: int, offset: int) -> np.ndarray:
    """||y[i] - y[offset + j]||^2 for j = 0 .. length-1.

    Accumulates one coordinate at a time over contiguous columns, which is
    substantially faster than reducing a strided trailing axis.
    """
    out = None
    for jdim in range(y.shape[1]):
        col = y[offset:offset + length, jdim] - y[i, jdim]
        np.square(col, out=col)
        if out is None:
            out = col
        else:
            out += col
    return out


def _direct_row(y: np.ndarray, i: int, n: int, q: int) -> np.ndarray:
    """Unnormalized window sums S(i, j) for all j, by direct summation."""
    acc = np.zeros(n)
    for step in range(q):
        acc += _plain_sq_rows(y, i + step, n, step)
    return acc


def _smallest_k(row: np.ndarray, k: int, force: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and values of the k smallest entries, ties to the smaller index.

    ``force`` is always included (the row's own sample), displacing the
    largest selected entry if necessary.
    """
    if k >= row.size:
        sel = np.arange(row.size)
    else:
        part = np.argpartition(row, k - 1)[:k]
        vmax = row[part].max()
        below = np.flatnonzero(row < vmax)
        tied = np.flatnonzero(row == vmax)
        sel = np.concatenate([below, tied[:k - below.size]])
    if force not in sel:
        order = np.lexsort((sel, row[sel]))
        sel = np.concatenate([sel[order][:-1], [force]])
    order = np.lexsort((sel, row[sel]))
    sel = sel[order]
    return sel, row[sel]


def _select_block(rows: np.ndarray, start: int, k: int,
                  ids: np.ndarray, dists: np.ndarray) -> None:
    """Exact top-k selection for a block of rows, written into ids/dists.

    The common case (no value ties straddling the k-th position) is fully
    vectorized; boundary ties fall back to the scalar path that breaks them
    toward the smaller index.
    """
    b, n = rows.shape
    if k >= n:
        order = np.argsort(rows, axis=1, kind="stable")
        for r in range(b):
            ids[start + r] = order[r]
            dists[start + r] = rows[r, order[r]]
        return
    part = np.argpartition(rows, k - 1, axis=1)[:, :k]
    pvals = np.take_along_axis(rows, part, axis=1)
    vmax = pvals.max(axis=1)
    total_at_max = (rows == vmax[:, None]).sum(axis=1)
    taken_at_max = (pvals == vmax[:, None]).sum(axis=1)
    for r in range(b):
        i = start + r
        if total_at_max[r] == taken_at_max[r]:
            # the k smallest values are unique as a set; own row is always
            # inside because its distance is the exact zero minimum
            sel = part[r]
            order = np.lexsort((sel, pvals[r]))
            ids[i] = sel[order]
            dists[i] = pvals[r][order]
        else:
            sel, vals = _smallest_k(rows[r], k, force=i)
            ids[i] = sel
            dists[i] = vals


def build_knn_graph(traj: StateTrajectory, cfg: DelayConfig,
                    k: int | None = None) -> SparseDistanceGraph:
    """Exact k-nearest-neighbor graph under the delay-averaged distance.

    For each row the k exactly-smallest distances are kept (ties broken by
    the smaller index), then the graph is symmetrized by taking the union
    of neighbor sets, storing one canonical value per unordered pair so
    that stored distances are exactly symmetric.

    Memory is O(n k); the full distance matrix is never materialized.
    """
    q = cfg.n_delays
    n = cfg.n_embedded(traj)
    if n < 2:
        raise ConfigurationError("need at least two embedded samples")
    if k is None:
        k = default_neighbors(n)
    if not 1 <= k < n:
        raise ConfigurationError(f"k must be in [1, {n - 1}], got {k}")

    y = traj.states
    ids = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k))

    block = 64
    for start in range(0, n, block):
        stop = min(start + block, n)
        if q == 1:
            # single delay: the window sum is the plain squared distance,
            # so whole blocks of rows come from per-coordinate outer
            # differences on contiguous 2-d arrays
            rows = None
            for jdim in range(y.shape[1]):
                diff = np.subtract.outer(y[start:stop, jdim], y[:n, jdim])
                np.square(diff, out=diff)
                if rows is None:
                    rows = diff
                else:
                    rows += diff
            rows[np.arange(stop - start), np.arange(start, stop)] = 0.0
        else:
            rows = np.empty((stop - start, n))
            for i in range(start, stop):
                if i % _RESTART_PERIOD == 0:
                    s_cur = _direct_row(y, i, n, q)
                else:
                    # S(i, j+1) = S(i-1, j) - D(i-1, j) + D(i-1+Q, j+Q)
                    head = _plain_sq_rows(y, i - 1, n - 1, 0)
                    tail = _plain_sq_rows(y, i - 1 + q, n - 1, q)
                    nxt = np.empty(n)
                    nxt[1:] = s_cur[: n - 1] - head + tail
                    diff = y[i:i + q] - y[:q]
                    nxt[0] = np.sum(diff * diff)
                    s_cur = nxt
                row = np.maximum(s_cur / q, 0.0)
                row[i] = 0.0
                rows[i - start] = row
        _select_block(rows, start, k, ids, dists)

    return _symmetrize(ids, dists, n, k, cfg)


def _symmetrize(ids: np.ndarray, dists: np.ndarray, n: int, k: int,
                cfg: DelayConfig) -> SparseDistanceGraph:
    rows = np.repeat(np.arange(n, dtype=np.int64), ids.shape[1])
    cols = ids.ravel()
    vals = dists.ravel()

    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    key = lo * n + hi
    # stable sort keeps the scan-order value (row min(i,j) first) per pair
    order = np.argsort(key, kind="stable")
    key, lo, hi, vals = key[order], lo[order], hi[order], vals[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    lo, hi, vals = lo[first], hi[first], vals[first]

    off = lo != hi
    all_rows = np.concatenate([lo, hi[off]])
    all_cols = np.concatenate([hi, lo[off]])
    all_vals = np.concatenate([vals, vals[off]])
    mat = sp.coo_matrix((all_vals, (all_rows, all_cols)), shape=(n, n)).tocsr()
    mat.sort_indices()
    return SparseDistanceGraph(
        n=n, k=k, n_delays=cfg.n_delays, dt=cfg.dt,
        indptr=mat.indptr.astype(np.int64),
        indices=mat.indices.astype(np.int32),
        sq_dists=mat.data,
        symmetrized=True)


def dense_distance_graph(traj: StateTrajectory, cfg: DelayConfig,
                         max_samples: int = 4096) -> SparseDistanceGraph:
    """Complete graph with all pairwise delay distances, for small datasets.

    Used by validation paths that need untruncated kernel rows.
    """
    q = cfg.n_delays
    n = cfg.n_embedded(traj)
    if n > max_samples:
        raise ConfigurationError(
            f"dense graph limited to {max_samples} samples, got {n}")
    y = traj.states
    dense = np.zeros((n, n))
    for i in range(n):
        dense[i] = _direct_row(y, i, n, q) / q
        dense[i, i] = 0.0
    dense = np.maximum(dense, 0.0)
    indptr = np.arange(0, n * n + 1, n, dtype=np.int64)
    indices = np.tile(np.arange(n, dtype=np.int32), n)
    return SparseDistanceGraph(
        n=n, k=n, n_delays=cfg.n_delays, dt=cfg.dt,
        indptr=indptr, indices=indices, sq_dists=dense.ravel(),
        symmetrized=True)


# -- serialization -------------------------------------------------------------
#
# Single file: u32 header length, JSON header {n, k, Q, dt, symmetrized, nnz},
# then little-endian blocks: indptr (i64), indices (i32), sq_dists (f64).

def save_graph(graph: SparseDistanceGraph, path) -> None:
    header = json.dumps({
        "n": graph.n, "k": graph.k, "Q": graph.n_delays, "dt": graph.dt,
        "symmetrized": graph.symmetrized, "nnz": graph.nnz,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(graph.indptr, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(graph.indices, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(graph.sq_dists, dtype="<f8").tobytes())


def load_graph(path) -> SparseDistanceGraph:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4:
        raise DataIOError(f"{path}: truncated graph file")
    (hlen,) = struct.unpack_from("<I", blob)
    try:
        header = json.loads(blob[4:4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataIOError(f"{path}: bad graph header: {exc}") from exc
    n, nnz = header["n"], header["nnz"]
    off = 4 + hlen
    expected = off + 8 * (n + 1) + 4 * nnz + 8 * nnz
    if len(blob) != expected:
        raise DataIOError(f"{path}: payload size mismatch")
    indptr = np.frombuffer(blob, dtype="<i8", count=n + 1, offset=off)
    off += 8 * (n + 1)
    indices = np.frombuffer(blob, dtype="<i4", count=nnz, offset=off)
    off += 4 * nnz
    sq_dists = np.frombuffer(blob, dtype="<f8", count=nnz, offset=off)
    return SparseDistanceGraph(
        n=n, k=header["k"], n_delays=header["Q"], dt=header["dt"],
        indptr=indptr.astype(np.int64), indices=indices.astype(np.int32),
        sq_dists=sq_dists.astype(np.float64), symmetrized=header["symmetrized"])
