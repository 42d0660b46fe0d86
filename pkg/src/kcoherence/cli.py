"""Command-line interface.

Subcommands mirror the pipeline stages (generate, embed, kernel, eigs,
analyze), plus whole-run orchestration (report), window sweeps (sweep), and
out-of-sample evaluation (extend).

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.

Heavy imports happen inside the commands so that --threads (or the
COHERENCE_THREADS environment variable) can cap the numeric thread pools
before numpy is loaded.
"""

from __future__ import annotations

import json
import os
import sys

import click

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _apply_threads(threads: int | None) -> None:
    value = threads if threads is not None else os.environ.get("COHERENCE_THREADS")
    if value is None:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(value))


def _exit_code(exc: Exception) -> int:
    from .errors import ConfigurationError, DataIOError, NumericError
    if isinstance(exc, ConfigurationError):
        return 2
    if isinstance(exc, NumericError):
        return 3
    if isinstance(exc, DataIOError):
        return 4
    return 1


def _run(func):
    """Run a command body, mapping library errors onto exit codes."""
    from .errors import CoherenceError
    try:
        func()
    except CoherenceError as exc:
        stage = getattr(exc, "stage", None)
        where = f" [stage: {stage}]" if stage else ""
        click.echo(f"error{where}: {exc}", err=True)
        sys.exit(_exit_code(exc))


@click.group()
@click.option("--threads", type=int, default=None,
              help="Cap numeric thread pools (also: COHERENCE_THREADS).")
def main(threads):
    """Coherent-observable extraction from time series."""
    _apply_threads(threads)


@main.command()
@click.option("--system", type=click.Choice(["l63", "circle"]), required=True)
@click.option("--dt", type=float, required=True)
@click.option("--samples", type=int, required=True,
              help="Total number of stored samples.")
@click.option("--x0", default="1,1,1", help="Initial state (comma-separated).")
@click.option("--spinup", type=float, default=0.0)
@click.option("--freq", type=float, default=1.0, help="Circle frequency.")
@click.option("--format", "fmt", type=click.Choice(["raw-float64", "csv"]),
              default="raw-float64")
@click.option("--out", type=click.Path(), required=True)
def generate(system, dt, samples, x0, spinup, freq, fmt, out):
    """Integrate a built-in system and store the trajectory."""
    def body():
        import numpy as np
        from . import trajectory as traj_mod
        if system == "l63":
            start = np.array([float(v) for v in x0.split(",")])
            traj = traj_mod.integrate_l63(start, dt, samples, spinup=spinup)
        else:
            traj = traj_mod.circle_flow(freq, dt, samples)
        traj_mod.save_trajectory(traj, out, fmt=fmt)
        click.echo(f"wrote {samples} samples to {out}")
    _run(body)


@main.command()
@click.option("--traj", "traj_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["raw-float64", "csv"]),
              default="raw-float64")
@click.option("--dt", type=float, default=None, help="Override sampling interval.")
@click.option("--delays", "-Q", type=int, required=True, help="Number of delays.")
@click.option("--knn", type=int, default=None, help="Neighbors per sample.")
@click.option("--out", type=click.Path(), required=True)
def embed(traj_path, fmt, dt, delays, knn, out):
    """Build the sparse delay-distance graph."""
    def body():
        from . import delay as delay_mod
        from . import trajectory as traj_mod
        traj = traj_mod.load_trajectory(traj_path, fmt=fmt, dt=dt)
        cfg = delay_mod.DelayConfig(delays, traj.dt)
        k = knn or delay_mod.default_neighbors(cfg.n_embedded(traj))
        graph = delay_mod.build_knn_graph(traj, cfg, k=k)
        delay_mod.save_graph(graph, out)
        click.echo(f"graph: n={graph.n} k={graph.k} nnz={graph.nnz} -> {out}")
    _run(body)


@main.command()
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--sigma", default="auto", help="'auto' or a positive real.")
@click.option("--dimension", default="auto", help="'auto' or a positive real.")
@click.option("--fixed-bandwidth", is_flag=True, default=False)
@click.option("--out", type=click.Path(), required=True)
@click.option("--tuning-out", type=click.Path(), default=None,
              help="Write the tuning report JSON here.")
def kernel(graph_path, sigma, dimension, fixed_bandwidth, out, tuning_out):
    """Tune bandwidths and build the bistochastic Markov factor."""
    def body():
        from . import delay as delay_mod
        from . import kernel as kernel_mod
        from . import pipeline as pipeline_mod
        graph = delay_mod.load_graph(graph_path)
        sig = sigma if sigma == "auto" else float(sigma)
        dim = dimension if dimension == "auto" else float(dimension)
        result = kernel_mod.build_markov_factor(
            graph, sigma=sig, dimension=dim,
            variable_bandwidth=not fixed_bandwidth)
        pipeline_mod.save_kernel_stage(result, out)
        if tuning_out:
            payload = {"base": result.tuning_base.to_dict()}
            if result.tuning_final is not None:
                payload["final"] = result.tuning_final.to_dict()
            with open(tuning_out, "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
        click.echo(f"kernel: sigma={result.sigma:.6g} m={result.m_est:.4g} -> {out}")
    _run(body)


@main.command()
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--kernel", "kernel_path", type=click.Path(exists=True), required=True)
@click.option("--num-eigs", "-l", type=int, default=21)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also export eigenpairs as CSV.")
def eigs(graph_path, kernel_path, num_eigs, seed, out, csv_path):
    """Compute the leading eigenpairs of the Markov kernel operator."""
    def body():
        from . import delay as delay_mod
        from . import pipeline as pipeline_mod
        from . import spectral as spectral_mod
        graph = delay_mod.load_graph(graph_path)
        result = pipeline_mod.load_kernel_stage(kernel_path, graph)
        eig = spectral_mod.leading_eigenpairs(result.factor, num_eigs, seed=seed)
        pipeline_mod.save_eigs_stage(eig, out)
        if csv_path:
            pipeline_mod.write_eigen_csv(eig, csv_path)
        top = ", ".join(f"{v:.6g}" for v in eig.eigenvalues[:5])
        click.echo(f"eigenvalues: {top}{'...' if eig.n_pairs > 5 else ''} -> {out}")
    _run(body)


@main.command()
@click.option("--traj", "traj_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["raw-float64", "csv"]),
              default="raw-float64")
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--kernel", "kernel_path", type=click.Path(exists=True), required=True)
@click.option("--eigs", "eigs_path", type=click.Path(exists=True), required=True)
@click.option("--pair", default="auto", help="'auto' or 'j1,j2'.")
@click.option("--lags", type=int, default=1000)
@click.option("--source-kind", type=click.Choice(["l63", "circle", "file"]),
              default="file", help="Used to pick analytic constants when known.")
@click.option("--out-dir", type=click.Path(), required=True)
def analyze(traj_path, fmt, graph_path, kernel_path, eigs_path, pair, lags,
            source_kind, out_dir):
    """Build the coherent observable and the full coherence report."""
    def body():
        from pathlib import Path
        from . import delay as delay_mod
        from . import nystrom as nystrom_mod
        from . import pipeline as pipeline_mod
        from . import trajectory as traj_mod
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj = traj_mod.load_trajectory(traj_path, fmt=fmt)
        graph = delay_mod.load_graph(graph_path)
        result = pipeline_mod.load_kernel_stage(kernel_path, graph)
        eig = pipeline_mod.load_eigs_stage(eigs_path)
        pair_val = "auto" if pair == "auto" else tuple(int(p) for p in pair.split(","))
        obs, gaps, report, model = pipeline_mod.analyze(
            traj, graph, result, eig, pair=pair_val, lags=lags,
            source_kind=source_kind)
        pipeline_mod.write_coherence_csv(report, out / "coherence.csv")
        pipeline_mod._write_json(out / "gaps.json", gaps.to_dict())
        pipeline_mod._write_json(
            out / "coherence.json",
            pipeline_mod._summary(graph.n_delays, graph.window, eig, report))
        nystrom_mod.save_model(model, out / "model.json")
        click.echo(f"frequency={obs.frequency:.6g} gap(gamma)={gaps.gamma:.6g} "
                   f"-> {out}")
    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), default=None,
              help="Override the config's output directory.")
def report(config_path, out_dir):
    """Run the full pipeline from a JSON config and emit all artifacts."""
    def body():
        from . import pipeline as pipeline_mod
        config = pipeline_mod.PipelineConfig.from_json(config_path)
        if out_dir is not None:
            config.out_dir = out_dir
        bundle = pipeline_mod.run_pipeline(config)
        click.echo(json.dumps(bundle.summary, indent=2, sort_keys=True))
    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--windows", required=True,
              help="Comma-separated embedding windows, e.g. '0,1,2,4,8'.")
@click.option("--out", type=click.Path(), required=True)
def sweep(config_path, windows, out):
    """Gap diagnostics across embedding windows on one trajectory."""
    def body():
        from . import pipeline as pipeline_mod
        config = pipeline_mod.PipelineConfig.from_json(config_path)
        values = [float(w) for w in windows.split(",")]
        rows = pipeline_mod.sweep_windows(config, values)
        pipeline_mod.write_sweep_csv(rows, out)
        for row in rows:
            if row["status"] == "ok":
                click.echo(f"T={row['window']:g} lambda={row['lambda']:.6g} "
                           f"gamma={row['gamma']:.6g} eta={row['eta']:.6g}")
            else:
                click.echo(f"T={row['window']:g} {row['status']}")
    _run(body)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--query", "query_path", type=click.Path(exists=True), required=True)
def extend(model_path, query_path):
    """Evaluate the fitted coherent feature at a query delay window."""
    def body():
        import numpy as np
        from . import nystrom as nystrom_mod
        from .errors import TrajectoryFormatError
        model = nystrom_mod.load_model(model_path)
        try:
            query = np.loadtxt(query_path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise TrajectoryFormatError(f"cannot read query {query_path}: {exc}")
        value = nystrom_mod.extend_feature(model, query)
        click.echo(json.dumps({
            "re": value.real, "im": value.imag,
            "abs": abs(value), "arg": float(np.angle(value)),
        }, sort_keys=True))
    _run(body)


if __name__ == "__main__":
    main()
