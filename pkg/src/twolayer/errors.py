"""Exception hierarchy shared by the solver modules."""


class TwoLayerError(Exception):
    """Base class for all package errors."""


class PoleProximity(TwoLayerError):
    """A Cauchy-kernel denominator vanished: a collocation point met the mesh."""


class Inadmissible(TwoLayerError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class NonConvergence(TwoLayerError):
    def __init__(self, iterations: int, best_norm: float, message: str = "") -> None:
        super().__init__(message or f"Newton did not converge after {iterations} iterations "
                         f"(best residual {best_norm:.3e})")
        self.iterations = iterations
        self.best_norm = best_norm


class SingularJacobian(TwoLayerError):
    pass


class OnInterface(TwoLayerError):
    pass


class OutOfDomain(TwoLayerError):
    pass


class InsufficientEvidence(TwoLayerError):
    pass
