"""Exception hierarchy. Every domain error derives from `FuncganError`."""


class FuncganError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class DomainTooNarrow(FuncganError):
    pass


class NonPositiveVariance(FuncganError):
    pass


class DimensionTooHigh(FuncganError):
    pass


class InvalidSamples(FuncganError):
    pass


class DegenerateSpectrum(FuncganError):
    pass


class ConvergenceFailure(FuncganError):
    def __init__(self, iterations, residual):
        super().__init__(f"eigensolver stalled after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class ZeroVariance(FuncganError):
    pass


class InvalidLoss(FuncganError):
    pass


class InfeasibleAlpha(FuncganError):
    pass


class DegenerateMode(FuncganError):
    def __init__(self, k):
        super().__init__(f"mode {k} has a double root; confluent solution required")
        self.k = k


class TrivialKernel(FuncganError):
    pass


class DisconnectedGraph(FuncganError):
    def __init__(self, n_components, value=None):
        msg = f"sample graph has {n_components} connected components"
        if value is not None:
            msg += f" (second eigenvalue {value:.3e})"
        super().__init__(msg)
        self.n_components = n_components


class UnknownKind(FuncganError):
    pass


class SingularCovariance(FuncganError):
    pass


class MissingManifest(FuncganError):
    pass


class FormatError(FuncganError):
    pass
