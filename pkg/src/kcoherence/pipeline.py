"""Declarative pipeline: trajectory -> graph -> kernel -> eigenpairs -> report.

A :class:`PipelineConfig` (usually loaded from JSON) fixes every knob; a run
is deterministic given the config and seed, and emits all artifacts plus a
manifest of content hashes. Each stage's output is reloadable, and re-running
downstream stages from cached artifacts reproduces a fresh run bit for bit
(inter-stage caching uses raw binary formats).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import delay as delay_mod
from . import kernel as kernel_mod
from . import koopman as koopman_mod
from . import nystrom as nystrom_mod
from . import spectral as spectral_mod
from . import trajectory as traj_mod
from .errors import ConfigurationError, CoherenceError, DataIOError

_FLOAT_FMT = "%.17g"


@dataclass
class PipelineConfig:
    """Full description of one pipeline run."""

    source: dict
    dt: float
    n_delays: int
    n_samples: int | None = None  # analysis samples for generated sources
    knn: int | None = None
    sigma: float | str = "auto"
    dimension: float | str = "auto"
    variable_bandwidth: bool = True
    n_eigenpairs: int = 21
    pair: tuple[int, int] | str = "auto"
    lags: int = 1000
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.n_delays < 1:
            raise ConfigurationError("n_delays must be >= 1")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.n_eigenpairs < 3:
            raise ConfigurationError("need at least 3 eigenpairs for gap reports")
        if self.lags < 1:
            raise ConfigurationError("lags must be >= 1")
        kind = self.source.get("kind")
        if kind not in ("l63", "circle", "file"):
            raise ConfigurationError(f"unknown source kind {kind!r}")
        if kind != "file" and self.n_samples is None:
            raise ConfigurationError("generated sources need n_samples")
        if self.pair != "auto":
            self.pair = tuple(int(j) for j in self.pair)
            if len(self.pair) != 2:
                raise ConfigurationError("pair must be 'auto' or two indices")

    @property
    def window(self) -> float:
        return self.n_delays * self.dt

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        if "window" in raw and "n_delays" not in raw:
            window = float(raw.pop("window"))
            n_delays = max(1, int(round(window / raw["dt"])))
            if abs(n_delays * raw["dt"] - window) > 1e-9 * max(window, raw["dt"]):
                raise ConfigurationError(
                    f"window {window} is not an integer multiple of dt {raw['dt']}")
            raw["n_delays"] = n_delays
        if "pair" in raw and isinstance(raw["pair"], list):
            raw["pair"] = tuple(raw["pair"])
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["pair"] != "auto":
            out["pair"] = list(out["pair"])
        return out


@dataclass
class ReportBundle:
    """Paths and content hashes of everything a run produced."""

    out_dir: Path
    files: dict
    summary: dict
    config: dict

    def path(self, name: str) -> Path:
        return self.out_dir / name


class _Stage:
    """Names a pipeline stage and removes its partial outputs on failure."""

    def __init__(self, name: str, out_dir: Path):
        self.name = name
        self.out_dir = out_dir
        self.created: list[Path] = []

    def emit(self, name: str) -> Path:
        path = self.out_dir / name
        self.created.append(path)
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            for path in self.created:
                path.unlink(missing_ok=True)
            if isinstance(exc, CoherenceError) and not hasattr(exc, "stage"):
                exc.stage = self.name
        return False


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = len(columns[0])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in range(rows):
            fh.write(",".join(_FLOAT_FMT % col[r] for col in columns) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# -- stage payload formats -------------------------------------------------------

def save_kernel_stage(result: kernel_mod.MarkovKernelResult, path) -> None:
    g = result.factor.g.tocsr()
    graph = result.kernel.graph
    np.savez(path,
             g_data=g.data, g_indices=g.indices, g_indptr=g.indptr,
             kappa=result.kernel.values,
             u=result.factor.u, v=result.factor.v, rho=result.rho,
             sigma=result.sigma, sigma_base=result.sigma_base,
             m_est=result.m_est, n=graph.n, n_delays=graph.n_delays,
             dt=graph.dt, kind=result.kernel.kind)


def load_kernel_stage(path, graph: delay_mod.SparseDistanceGraph) -> kernel_mod.MarkovKernelResult:
    try:
        with np.load(path, allow_pickle=False) as data:
            n = int(data["n"])
            if n != graph.n:
                raise ConfigurationError(
                    f"kernel stage was built for n={n}, graph has n={graph.n}")
            g = sp.csr_matrix(
                (data["g_data"], data["g_indices"], data["g_indptr"]), shape=(n, n))
            kernel = kernel_mod.SparseKernel(
                graph=graph, values=data["kappa"], kind=str(data["kind"]))
            factor = kernel_mod.BistochasticFactor(g=g, u=data["u"], v=data["v"])
            tuning = kernel_mod.BandwidthTuning(
                grid=np.array([]), kernel_sums=np.array([]), slopes=np.array([]),
                sigma_star=float(data["sigma_base"]), m_est=float(data["m_est"]))
            return kernel_mod.MarkovKernelResult(
                factor=factor, kernel=kernel, rho=data["rho"],
                sigma=float(data["sigma"]), sigma_base=float(data["sigma_base"]),
                m_est=float(data["m_est"]), tuning_base=tuning)
    except OSError as exc:
        raise DataIOError(f"cannot read kernel stage {path}: {exc}") from exc


def save_eigs_stage(eig: spectral_mod.EigenDecomposition, path) -> None:
    np.savez(path, eigenvalues=eig.eigenvalues, eigenvectors=eig.eigenvectors,
             residuals=eig.residuals)


def load_eigs_stage(path) -> spectral_mod.EigenDecomposition:
    try:
        with np.load(path, allow_pickle=False) as data:
            return spectral_mod.EigenDecomposition(
                eigenvalues=data["eigenvalues"],
                eigenvectors=data["eigenvectors"],
                residuals=data["residuals"])
    except OSError as exc:
        raise DataIOError(f"cannot read eigen stage {path}: {exc}") from exc


def write_eigen_csv(eig: spectral_mod.EigenDecomposition, path) -> None:
    """One column per eigenvector; the header row holds the eigenvalues."""
    with open(path, "w") as fh:
        fh.write(",".join(_FLOAT_FMT % v for v in eig.eigenvalues) + "\n")
        for r in range(eig.n):
            fh.write(",".join(_FLOAT_FMT % v for v in eig.eigenvectors[r]) + "\n")


def write_coherence_csv(report: koopman_mod.CoherenceReport, path) -> None:
    header = ["t", "alpha_re", "alpha_im", "alpha_abs", "s", "big_s",
              "eps_tilde", "eps", "residual", "residual_tail",
              "alpha_abs_unbiased", "beta_abs", "r_norm"]
    cols = [report.t, report.alpha.real, report.alpha.imag, np.abs(report.alpha),
            report.bounds.s, report.bounds.big_s, report.bounds.eps_tilde,
            report.bounds.eps, report.residual, report.residual_tail,
            np.abs(report.alpha_unbiased), np.abs(report.beta), report.r_norm]
    _write_csv(path, header, cols)


# -- stages ----------------------------------------------------------------------

def make_trajectory(config: PipelineConfig) -> traj_mod.StateTrajectory:
    """Produce the input trajectory for a run.

    For generated sources the total sample count is n_samples + n_delays - 1,
    so exactly n_samples delay windows are available for analysis.
    """
    source = config.source
    kind = source["kind"]
    if kind == "file":
        return traj_mod.load_trajectory(
            source["path"], fmt=source.get("format", "raw-float64"),
            dt=source.get("dt"))
    total = config.n_samples + config.n_delays - 1
    if kind == "l63":
        x0 = np.asarray(source.get("x0", [1.0, 1.0, 1.0]), dtype=float)
        return traj_mod.integrate_l63(x0, config.dt, total,
                                      spinup=float(source.get("spinup", 640.0)))
    if kind == "circle":
        return traj_mod.circle_flow(float(source.get("freq", 1.0)),
                                    config.dt, total)
    raise ConfigurationError(f"unknown source kind {kind!r}")


def analyze(traj: traj_mod.StateTrajectory, graph: delay_mod.SparseDistanceGraph,
            kernel_result: kernel_mod.MarkovKernelResult,
            eig: spectral_mod.EigenDecomposition, pair="auto", lags: int = 1000,
            window: float | None = None, source_kind: str = "file"):
    """Coherence stage: observable, gaps, constants, lag-resolved report."""
    pair = (1, 2) if pair == "auto" else tuple(pair)
    win = graph.window if window is None else window
    gaps = spectral_mod.spectral_gaps(eig, pair[0], pair[1], win)
    obs = koopman_mod.make_observable(eig, pair[0], pair[1], traj.dt)
    field_def = traj_mod.lorenz63_field() if source_kind == "l63" else None
    rho = kernel_result.rho if kernel_result.kernel.kind == "variable-bandwidth" else None
    constants = koopman_mod.estimate_constants(
        traj, graph, sigma=kernel_result.sigma, rho=rho, field_def=field_def)
    q_max = min(lags, graph.n - 1)
    report = koopman_mod.build_coherence_report(obs, gaps, constants, q_max)
    model = nystrom_mod.build_feature_model(traj, kernel_result, obs)
    return obs, gaps, report, model


def _summary(n_delays: int, window: float, eig, report) -> dict:
    gap0 = float(eig.eigenvalues[0] - eig.eigenvalues[1])
    out = report.summary()
    out.update({
        "eigenvalues": eig.eigenvalues.tolist(),
        "top_gap": gap0,
        "short_window_regime": n_delays == 1,
        "window": window,
    })
    return out


def run_pipeline(config: PipelineConfig) -> ReportBundle:
    """Execute every stage, write all artifacts, and return the bundle."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}

    with _Stage("trajectory", out_dir) as stage:
        traj = make_trajectory(config)
        traj_mod.save_trajectory(traj, stage.emit("trajectory.traj"))

    with _Stage("delay", out_dir) as stage:
        cfg = delay_mod.DelayConfig(config.n_delays, traj.dt)
        k = config.knn or delay_mod.default_neighbors(cfg.n_embedded(traj))
        graph = delay_mod.build_knn_graph(traj, cfg, k=k)
        delay_mod.save_graph(graph, stage.emit("graph.bin"))

    with _Stage("kernel", out_dir) as stage:
        kernel_result = kernel_mod.build_markov_factor(
            graph, sigma=config.sigma, dimension=config.dimension,
            variable_bandwidth=config.variable_bandwidth)
        save_kernel_stage(kernel_result, stage.emit("kernel.npz"))
        _write_json(stage.emit("tuning_base.json"),
                    kernel_result.tuning_base.to_dict())
        if kernel_result.tuning_final is not None:
            _write_json(stage.emit("tuning_final.json"),
                        kernel_result.tuning_final.to_dict())

    with _Stage("spectral", out_dir) as stage:
        n_pairs = min(config.n_eigenpairs, graph.n)
        eig = spectral_mod.leading_eigenpairs(kernel_result.factor, n_pairs,
                                              seed=config.seed)
        save_eigs_stage(eig, stage.emit("eigs.npz"))
        write_eigen_csv(eig, stage.emit("eigenvalues.csv"))

    with _Stage("coherence", out_dir) as stage:
        obs, gaps, report, model = analyze(
            traj, graph, kernel_result, eig, pair=config.pair, lags=config.lags,
            window=config.window, source_kind=config.source.get("kind", "file"))
        summary = _summary(config.n_delays, config.window, eig, report)
        write_coherence_csv(report, stage.emit("coherence.csv"))
        _write_json(stage.emit("gaps.json"), gaps.to_dict())
        _write_json(stage.emit("coherence.json"), summary)
        nystrom_mod.save_model(model, stage.emit("model.json"))
        stage.created.append(out_dir / "model.arrays.npz")

    artifact_names = ["trajectory.traj", "graph.bin", "kernel.npz",
                      "tuning_base.json", "eigs.npz", "eigenvalues.csv",
                      "coherence.csv", "gaps.json", "coherence.json",
                      "model.json", "model.arrays.npz"]
    if kernel_result.tuning_final is not None:
        artifact_names.insert(4, "tuning_final.json")
    files = {name: _sha256(out_dir / name) for name in artifact_names}
    bundle = ReportBundle(out_dir=out_dir, files=files, summary=summary,
                          config=config.to_dict())
    _write_json(out_dir / "bundle.json",
                {"files": files, "summary": bundle.summary, "config": bundle.config})
    return bundle


def sweep_windows(config: PipelineConfig, windows) -> list[dict]:
    """Gap diagnostics across embedding windows on one shared trajectory.

    Window 0 uses a single delay (the plain distance). The tracked pair is
    fixed at the sorted indices (1, 2): the smaller eigenvalue of the pair
    and the reported eta follow the requested window. Rows record failures
    without aborting the sweep.
    """
    windows = [float(w) for w in windows]
    delays = []
    for w in windows:
        if w == 0:
            delays.append(1)
            continue
        q = int(round(w / config.dt))
        if q < 1 or abs(q * config.dt - w) > 1e-9 * max(w, config.dt):
            raise ConfigurationError(
                f"window {w} is not an integer multiple of dt {config.dt}")
        delays.append(q)

    if config.source["kind"] == "file":
        full = make_trajectory(config)
    else:
        widest = PipelineConfig.from_dict(
            {**config.to_dict(), "n_delays": max(delays)})
        full = make_trajectory(widest)

    rows = []
    for w, q in zip(windows, delays):
        row = {"window": w, "n_delays": q, "status": "ok"}
        try:
            if config.source["kind"] == "file":
                traj = full
            else:
                total = config.n_samples + q - 1
                traj = traj_mod.StateTrajectory(
                    full.states[:total], full.dt, full.spinup, source=full.source)
            cfg = delay_mod.DelayConfig(q, traj.dt)
            k = config.knn or delay_mod.default_neighbors(cfg.n_embedded(traj))
            graph = delay_mod.build_knn_graph(traj, cfg, k=k)
            kernel_result = kernel_mod.build_markov_factor(
                graph, sigma=config.sigma, dimension=config.dimension,
                variable_bandwidth=config.variable_bandwidth)
            n_pairs = min(config.n_eigenpairs, graph.n)
            eig = spectral_mod.leading_eigenpairs(kernel_result.factor, n_pairs,
                                                  seed=config.seed)
            gaps = spectral_mod.spectral_gaps(eig, 1, 2, w)
            row.update({
                "lambda": gaps.lam, "nu": gaps.nu, "gamma": gaps.gamma,
                "delta": gaps.delta,
                "delta_over_gamma": gaps.delta / gaps.gamma if gaps.gamma > 0 else np.inf,
                "delta_rel": gaps.delta_rel, "eta": gaps.eta,
                "top_gap": float(eig.eigenvalues[0] - eig.eigenvalues[1]),
                "degenerate": gaps.degenerate,
            })
        except CoherenceError as exc:
            row.update({"status": f"failed: {exc}"})
        rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    header = ["T", "lambda", "gamma", "delta", "delta_over_gamma",
              "delta_rel", "eta", "nu", "top_gap", "degenerate", "status"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [_FLOAT_FMT % row["window"]]
            for key in header[1:-2]:
                val = row.get(key)
                cells.append("" if val is None else _FLOAT_FMT % val)
            cells.append(str(int(row.get("degenerate", False))))
            cells.append(row["status"].replace(",", ";"))
            fh.write(",".join(cells) + "\n")
