"""Exception hierarchy shared by all gridwave modules."""


class GridwaveError(Exception):
    """Base class for every error raised by the package."""


# --- input / data errors -------------------------------------------------

class ParseError(GridwaveError):
    pass


class BusReferenceError(GridwaveError):
    """A branch, load or device names a bus that does not exist."""


class DuplicateIdError(GridwaveError):
    pass


class SingularBranchError(GridwaveError):
    pass


class ValidationError(GridwaveError):
    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


# --- power flow ------------------------------------------------------------

class NonConvergence(GridwaveError):
    def __init__(self, message, iterations=None, mismatch=None, last_iterate=None):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch
        self.last_iterate = last_iterate


class SingularJacobian(GridwaveError):
    pass


# --- device models ---------------------------------------------------------

class SingularStator(GridwaveError):
    pass


class InitializationFailure(GridwaveError):
    def __init__(self, message, device=None, stage=None, residual=None):
        super().__init__(message)
        self.device = device
        self.stage = stage
        self.residual = residual


class VoltageCollapseFloor(UserWarning):
    """Bus voltage fell below the load-model floor; P/I currents are frozen."""


# --- simulation / solvers ---------------------------------------------------

class SolverError(GridwaveError):
    pass


class NonFiniteResidual(SolverError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SingularAlgebraicRestart(SolverError):
    pass


class NewtonDivergence(SolverError):
    pass


class StepSizeUnderflow(SolverError):
    pass


class SingularIterationMatrix(SolverError):
    pass


class MaxIterations(SolverError):
    pass


# --- linearization -----------------------------------------------------------

class NonFiniteJacobianEntry(GridwaveError):
    pass


class SingularRy(GridwaveError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EigenSolverFailure(GridwaveError):
    pass


class SignalMismatch(GridwaveError):
    pass
