"""Exception hierarchy shared by every module of the package."""


class SCLEError(Exception):
    """Base class; ``module`` names the component that raised."""

    module = "scle"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class DomainError(SCLEError, ValueError):
    module = "correlation"


class QuadratureError(SCLEError, ArithmeticError):
    module = "correlation"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UsageError(SCLEError, ValueError):
    pass


class NoiseConstructionError(SCLEError, ArithmeticError):
    module = "noise"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ModelDefinitionError(SCLEError, ValueError):
    module = "dynamics"


class RunError(SCLEError, RuntimeError):
    module = "ensemble"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(SCLEError, ValueError):
    module = "cli"

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
