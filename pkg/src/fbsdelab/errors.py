"""Exception hierarchy shared by every module."""


class FBSDEError(Exception):
    """Base class for all errors raised by fbsdelab."""


class ExprError(FBSDEError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    def __init__(self, name, expected, got, offset):
        super().__init__(
            f"function {name!r} takes {expected} argument(s), got {got} (offset {offset})"
        )
        self.name = name
        self.offset = offset


class MissingBindingError(ExprError):
    pass


class DomainError(ExprError):
    """Non-finite evaluation result. ``point`` holds the offending bindings."""

    def __init__(self, message, point=None):
        super().__init__(message if point is None else f"{message} at {point}")
        self.point = point


class ConfigError(FBSDEError):
    pass


class ScopeError(ConfigError):
    pass


class SolverError(FBSDEError):
    pass


class SingularDesignError(SolverError):
    def __init__(self, step, condition):
        super().__init__(
            f"singular regression design at step {step} (condition estimate {condition:.3e})"
        )
        self.step = step
        self.condition = condition


class NonConvergenceError(SolverError):
    def __init__(self, message, residual_history):
        super().__init__(message)
        self.residual_history = list(residual_history)


class StabilityError(SolverError):
    pass


class MeshDomainError(FBSDEError):
    pass
