"""Generation, integration, and file I/O of uniformly sampled trajectories.

All downstream analysis consumes a :class:`StateTrajectory`: a matrix of
states sampled at a fixed interval ``dt``, one state per row. Trajectories
come from the built-in Lorenz 63 generator, a generic fixed-step RK4
integrator for user-supplied vector fields, the analytic circle flow, or
from CSV / raw-float64 files on disk.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    IntegrationDivergedError,
    MissingMetadataError,
    NonFiniteDataError,
    RaggedRowsError,
    TrajectoryFormatError,
)

_RAW_MAGIC = b"CTRJ"
# magic (4) + u32 count (4) + u32 dim (4) + 4 bytes padding + f64 dt (8)
_RAW_HEADER = struct.Struct("<4sII4xd")


@dataclass(frozen=True)
class VectorField:
    """A deterministic vector field on R^d.

    ``evaluate`` maps a state vector of length ``dimension`` to a tangent
    vector of the same length.
    """

    dimension: int
    evaluate: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError("vector field dimension must be positive")


@dataclass(frozen=True)
class StateTrajectory:
    """Uniformly sampled states of a flow.

    Parameters
    ----------
    states : ndarray, shape (n_samples, dim)
        One state per row, in sampling order.
    dt : float
        Sampling interval in natural time units.
    spinup : float
        Transient duration that was integrated and discarded before the
        first stored sample.
    source : str
        Free-form provenance label.
    """

    states: np.ndarray
    dt: float
    spinup: float = 0.0
    source: str = ""

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise ConfigurationError("states must be a nonempty 2-d array")
        if not np.isfinite(states).all():
            raise NonFiniteDataError("trajectory contains non-finite states")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.spinup < 0:
            raise ConfigurationError("spinup must be nonnegative")
        object.__setattr__(self, "states", states)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def observe(self, columns) -> "StateTrajectory":
        """Apply a column-selection observation map."""
        cols = np.atleast_1d(np.asarray(columns, dtype=int))
        return StateTrajectory(self.states[:, cols], self.dt, self.spinup,
                               source=f"{self.source}|columns{list(cols)}")


def lorenz63_field(sigma: float = 10.0, rho: float = 28.0,
                   beta: float = 8.0 / 3.0) -> VectorField:
    """The Lorenz 63 vector field with the standard chaotic parameters."""

    def evaluate(x):
        return np.array([
            sigma * (x[1] - x[0]),
            rho * x[0] - x[1] - x[0] * x[2],
            x[0] * x[1] - beta * x[2],
        ])

    return VectorField(3, evaluate)


def _rk4_steps(f, x, h, n_steps):
    """Advance ``x`` by ``n_steps`` classical RK4 steps of size ``h``."""
    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def integrate_field(field: VectorField, x0, dt: float, n_samples: int,
                    spinup: float = 0.0, max_step: float = 1e-3,
                    source: str = "generic") -> StateTrajectory:
    """Integrate ``field`` with fixed-step classical RK4.

    The sampling interval ``dt`` is divided into the smallest number of
    equal substeps not exceeding ``max_step``, so the stepper is
    deterministic for given inputs. The spinup transient is integrated
    with the same substep size and discarded; the first stored sample is
    the state advanced by exactly ``spinup`` time units.

    Raises
    ------
    IntegrationDivergedError
        If any intermediate state stops being finite.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != field.dimension:
        raise ConfigurationError(
            f"x0 has length {x0.size}, field expects {field.dimension}")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if n_samples < 2:
        raise ConfigurationError("need at least two samples")
    if spinup < 0:
        raise ConfigurationError("spinup must be nonnegative")
    if not max_step > 0:
        raise ConfigurationError("max_step must be positive")

    substeps = max(1, int(np.ceil(dt / max_step - 1e-12)))
    h = dt / substeps
    f = field.evaluate

    x = x0
    if spinup > 0:
        n_spin = max(1, int(np.ceil(spinup / h - 1e-12)))
        x = _rk4_steps(f, x, spinup / n_spin, n_spin)
        if not np.isfinite(x).all():
            raise IntegrationDivergedError("state diverged during spinup")

    out = np.empty((n_samples, field.dimension))
    out[0] = x
    for n in range(1, n_samples):
        x = _rk4_steps(f, x, h, substeps)
        if not np.isfinite(x).all():
            raise IntegrationDivergedError(f"state diverged at sample {n}")
        out[n] = x
    return StateTrajectory(out, dt, spinup, source=source)


def integrate_l63(x0, dt: float, n_samples: int,
                  spinup: float = 0.0) -> StateTrajectory:
    """Sample an orbit of the Lorenz 63 system.

    Uses the shared RK4 stepper with substep ``min(dt, 1e-3)``, which
    reproduces the attractor statistics the pipeline needs while staying
    deterministic and portable.
    """
    return integrate_field(lorenz63_field(), x0, dt, n_samples, spinup,
                           max_step=min(dt, 1e-3), source="l63")


def circle_flow(freq: float, dt: float, n_samples: int) -> StateTrajectory:
    """Unit-speed rotation on the circle: states (cos(f n dt), sin(f n dt))."""
    if freq == 0:
        raise ConfigurationError("freq must be nonzero")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if n_samples < 1:
        raise ConfigurationError("need at least one sample")
    t = freq * dt * np.arange(n_samples)
    return StateTrajectory(np.column_stack([np.cos(t), np.sin(t)]), dt,
                           source=f"circle(freq={freq})")


# -- file formats --------------------------------------------------------------
#
# CSV: one state per line, comma-separated, no header; metadata in a JSON
# sidecar ``<path>.meta.json`` holding {"dt": <real>, "spinup": <real>}.
# raw-float64: little-endian row-major payload after a 24-byte header
# (magic "CTRJ", u32 count, u32 dim, f64 dt; the f64 is 8-byte aligned).


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_trajectory(traj: StateTrajectory, path, fmt: str = "raw-float64") -> None:
    """Write a trajectory as ``csv`` or ``raw-float64``."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w") as fh:
            for row in traj.states:
                fh.write(",".join("%.17g" % v for v in row) + "\n")
        with open(_sidecar_path(path), "w") as fh:
            json.dump({"dt": traj.dt, "spinup": traj.spinup}, fh)
            fh.write("\n")
    elif fmt == "raw-float64":
        with open(path, "wb") as fh:
            fh.write(_RAW_HEADER.pack(_RAW_MAGIC, traj.n_samples, traj.dim, traj.dt))
            fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())
    else:
        raise ConfigurationError(f"unknown trajectory format {fmt!r}")


def load_trajectory(path, fmt: str = "raw-float64",
                    dt: float | None = None) -> StateTrajectory:
    """Read a trajectory written by :func:`save_trajectory`.

    For CSV input the sampling interval comes from the JSON sidecar unless
    ``dt`` is given explicitly. NaN or infinite entries are rejected.
    """
    path = Path(path)
    if fmt == "csv":
        return _load_csv(path, dt)
    if fmt == "raw-float64":
        return _load_raw(path)
    raise ConfigurationError(f"unknown trajectory format {fmt!r}")


def _load_csv(path: Path, dt: float | None) -> StateTrajectory:
    rows = []
    width = None
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = [float(tok) for tok in line.split(",")]
                except ValueError as exc:
                    raise TrajectoryFormatError(
                        f"{path}:{lineno}: unparseable value ({exc})") from exc
                if width is None:
                    width = len(row)
                elif len(row) != width:
                    raise RaggedRowsError(
                        f"{path}:{lineno}: expected {width} columns, got {len(row)}")
                rows.append(row)
    except OSError as exc:
        raise TrajectoryFormatError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise TrajectoryFormatError(f"{path}: need at least two rows")

    states = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(states).all():
        raise NonFiniteDataError(f"{path}: non-finite entry in trajectory")

    spinup = 0.0
    if dt is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise MissingMetadataError(
                f"{path}: no dt given and sidecar {sidecar.name} not found")
        with open(sidecar) as fh:
            meta = json.load(fh)
        if "dt" not in meta:
            raise MissingMetadataError(f"{sidecar}: missing 'dt'")
        dt = float(meta["dt"])
        spinup = float(meta.get("spinup", 0.0))
    return StateTrajectory(states, dt, spinup, source=str(path))


def _load_raw(path: Path) -> StateTrajectory:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise TrajectoryFormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _RAW_HEADER.size:
        raise TrajectoryFormatError(f"{path}: truncated header")
    magic, count, dim, dt = _RAW_HEADER.unpack_from(blob)
    if magic != _RAW_MAGIC:
        raise TrajectoryFormatError(f"{path}: bad magic {magic!r}")
    expected = _RAW_HEADER.size + 8 * count * dim
    if len(blob) != expected:
        raise TrajectoryFormatError(
            f"{path}: payload size {len(blob)} does not match header ({expected})")
    states = np.frombuffer(blob, dtype="<f8", offset=_RAW_HEADER.size)
    states = states.reshape(count, dim).astype(np.float64)
    if not np.isfinite(states).all():
        raise NonFiniteDataError(f"{path}: non-finite entry in trajectory")
    if not dt > 0:
        raise MissingMetadataError(f"{path}: header carries invalid dt {dt}")
    return StateTrajectory(states, dt, source=str(path))
