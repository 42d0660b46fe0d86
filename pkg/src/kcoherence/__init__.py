"""Coherent observables of ergodic dynamical systems.

Builds kernel integral operators on delay-coordinate-mapped time series,
computes their leading eigenpairs under the empirical measure, and forms
complex observables with approximately cyclical evolution, together with
spectral-gap diagnostics and coherence bounds.

Submodules are imported lazily so the command-line entry point can
configure thread pools before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    # trajectory
    "VectorField": "trajectory",
    "StateTrajectory": "trajectory",
    "lorenz63_field": "trajectory",
    "integrate_field": "trajectory",
    "integrate_l63": "trajectory",
    "circle_flow": "trajectory",
    "save_trajectory": "trajectory",
    "load_trajectory": "trajectory",
    # delay
    "DelayConfig": "delay",
    "SparseDistanceGraph": "delay",
    "delay_sq_distance": "delay",
    "build_knn_graph": "delay",
    "dense_distance_graph": "delay",
    "default_neighbors": "delay",
    "save_graph": "delay",
    "load_graph": "delay",
    # kernel
    "BandwidthTuning": "kernel",
    "SparseKernel": "kernel",
    "BistochasticFactor": "kernel",
    "tune_bandwidth": "kernel",
    "bandwidth_function": "kernel",
    "variable_bandwidth_kernel": "kernel",
    "bistochastic_factor": "kernel",
    "build_markov_factor": "kernel",
    # spectral
    "EigenDecomposition": "spectral",
    "GapReport": "spectral",
    "leading_eigenpairs": "spectral",
    "dense_eigen_oracle": "spectral",
    "spectral_gaps": "spectral",
    # koopman
    "shift": "koopman",
    "fd_generator": "koopman",
    "generator_frequency": "koopman",
    "skew_generator_frequency": "koopman",
    "CoherentObservable": "koopman",
    "make_observable": "koopman",
    "autocorrelation": "koopman",
    "decomposition_diagnostics": "koopman",
    "BoundConstants": "koopman",
    "estimate_constants": "koopman",
    "coherence_bounds": "koopman",
    "pseudospectral_residual": "koopman",
    "commutator_norm": "koopman",
    "CoherenceReport": "koopman",
    "build_coherence_report": "koopman",
    # nystrom
    "FeatureModel": "nystrom",
    "build_feature_model": "nystrom",
    "extend_feature": "nystrom",
    "extend_feature_batch": "nystrom",
    "save_model": "nystrom",
    "load_model": "nystrom",
    # estimator
    "KernelCoherence": "estimator",
    # pipeline
    "PipelineConfig": "pipeline",
    "ReportBundle": "pipeline",
    "run_pipeline": "pipeline",
    "sweep_windows": "pipeline",
}

__all__ = sorted(_EXPORTS) + ["errors"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
