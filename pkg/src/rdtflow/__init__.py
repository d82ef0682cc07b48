"""Ricci-DeTurck flow on manifolds with boundary, on a one-chart collar grid."""
from .errors import (AdaptedChartViolation, BoundaryEscape, ConfigError, GeometryError,
                     IncompatibleData, JacobianDegenerate, LeftAdmissibleSet,
                     LinearSolveFailure, ManufactureInconsistent, NoContraction,
                     NotParabolic, NotPositiveDefinite, RdtFlowError, SolverError,
                     UnknownScenario)
from .grid import ChartGrid
from .parabolic_bundle import ProblemSpec, SolverConfig, SubbundleSplit, evolve
from .ricci_deturck import Background, MuFunction, evolve_rdt, rdt_problem_spec
from .scenarios import build, list_scenarios

__version__ = "0.1.0"
