"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line driver:
10-19 for solver failures, 20-29 for geometry failures and 30-39 for
configuration problems.
"""


class RdtFlowError(Exception):
    exit_code = 1

    def __init__(self, message="", **info):
        super().__init__(message)
        self.info = info
        # partial FlowTrace attached by the time loop on abort
        self.trace = None


class SolverError(RdtFlowError):
    exit_code = 10


class NoContraction(SolverError):
    exit_code = 11


class LinearSolveFailure(SolverError):
    exit_code = 12


class NotParabolic(SolverError):
    exit_code = 13


class IncompatibleData(SolverError):
    exit_code = 14


class LeftAdmissibleSet(SolverError):
    exit_code = 15


class ManufactureInconsistent(SolverError):
    exit_code = 16


class GeometryError(RdtFlowError):
    exit_code = 20


class NotPositiveDefinite(GeometryError):
    exit_code = 21


class AdaptedChartViolation(GeometryError):
    exit_code = 22


class BoundaryEscape(GeometryError):
    exit_code = 23


class JacobianDegenerate(GeometryError):
    exit_code = 24


class ConfigError(RdtFlowError):
    exit_code = 30


class UnknownScenario(ConfigError):
    exit_code = 31
