"""Projection robust Wasserstein distances by Riemannian block coordinate descent."""
from .measures import (
    DiscreteMeasure,
    InstanceError,
    PointCloud,
    ProblemInstance,
    load_instance,
    read_measure,
    save_instance,
    write_measure,
)
from .solvers import (
    ALGORITHMS,
    SolveResult,
    SolverConfig,
    SolverError,
    StationarityReport,
    rabcd,
    ragas,
    rbcd,
    rgas,
    solve,
    stationarity_report,
)
from .testbed import gen_fragmented_hypercube, gen_wishart_gaussian, reference_wasserstein

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "DiscreteMeasure",
    "InstanceError",
    "PointCloud",
    "ProblemInstance",
    "SolveResult",
    "SolverConfig",
    "SolverError",
    "StationarityReport",
    "gen_fragmented_hypercube",
    "gen_wishart_gaussian",
    "load_instance",
    "rabcd",
    "ragas",
    "rbcd",
    "read_measure",
    "reference_wasserstein",
    "rgas",
    "save_instance",
    "solve",
    "stationarity_report",
    "write_measure",
]
