"""Exception hierarchy shared by all modules."""


class MinkowskiError(Exception):
    """Base class for every error raised by this package."""


class ZeroVector(MinkowskiError, ValueError):
    pass


class InvalidModel(MinkowskiError, ValueError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NoConvergence(MinkowskiError, RuntimeError):
    pass


class MeshBuildFailure(MinkowskiError, RuntimeError):
    pass


class MeshMismatch(MinkowskiError, ValueError):
    pass


class NonPositiveField(MinkowskiError, ValueError):
    pass


class NonPositiveK(NonPositiveField):
    pass


class Inadmissible(MinkowskiError, ValueError):
    pass


class SingularGram(MinkowskiError, RuntimeError):
    pass


class DegenerateBody(MinkowskiError, ValueError):
    pass


class ClosureViolated(MinkowskiError):
    def __init__(self, message, residual=None, tolerance=None):
        super().__init__(message)
        self.residual = residual
        self.tolerance = tolerance


class SolverFailure(MinkowskiError, RuntimeError):
    """Newton or continuation could not produce an admissible solution."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class AdmissibilityLost(SolverFailure):
    pass


class MaxIterations(SolverFailure):
    pass


class LinearSolveFailure(SolverFailure):
    pass


class ContinuationStalled(SolverFailure):
    pass


class ConfigError(MinkowskiError, ValueError):
    """Aggregated configuration violations (``messages`` keeps all of them)."""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class IoError(MinkowskiError, OSError):
    pass
