"""Polynomial normal forms for contracting polynomial maps along periodic orbits.

The package builds, degree by degree, a coordinate change H at every point of
a periodic orbit that conjugates a cocycle of contracting polynomial fiber
maps to a normal form P containing only sub-resonance terms of the Lyapunov
spectrum.  The pipeline is

    OrbitCocycle -> monodromy_spectrum -> SubResStructure -> lyapunov_frames
                 -> SolverContext -> solve_normal_form -> verification

with a JSON-driven CLI (`orbitnf run/list/spectrum/verify`) on top.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "grading": [
        "ContractionBudgetError",
        "Spectrum",
        "SubResStructure",
        "contraction_factor",
        "degree_bound",
        "enumerate_types",
        "spectral_gap_lambda",
    ],
    "polymap": [
        "GradedSpace",
        "PolyMap",
        "compose_truncated",
        "invert_truncated",
        "lyapunov_opnorm",
        "project_subresonance",
    ],
    "cocycle": [
        "ClusterGapError",
        "LyapunovFrame",
        "NonContractingError",
        "OrbitCocycle",
        "TailCertificationError",
        "finite_time_exponents",
        "lyapunov_frames",
        "monodromy_spectrum",
        "sandwich_check",
    ],
    "normalform": [
        "NormalFormResult",
        "SeriesBudgetError",
        "SeriesStagnationError",
        "SolverContext",
        "assemble_Q",
        "solve_homogeneous_degree",
        "solve_normal_form",
        "twisted_transfer",
    ],
    "verify": [
        "CommutingExtension",
        "chart_consistency",
        "centralizer_check",
        "conjugacy_residual",
        "direct_normal_form",
        "direct_solve_oracle",
        "flag_invariance",
        "gauge_compare",
        "iterate_extension",
        "series_vs_direct",
    ],
    "scenarios": ["builtin_names", "build_builtin"],
    "cli": ["main", "run_scenario", "list_builtins"],
}

_ORIGIN = {name: module for module, names in _EXPORTS.items() for name in names}

__all__ = sorted(_ORIGIN) + ["__version__"]


def __getattr__(name):
    module = _ORIGIN.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value
