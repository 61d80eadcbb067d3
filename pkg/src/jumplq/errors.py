"""Exception hierarchy shared by every jumplq module."""


class JumpLQError(Exception):
    """Base class; ``module`` names the subsystem that raised."""

    module = "jumplq"

    def __str__(self):
        return f"{self.module}: {super().__str__()}"


class ModelError(JumpLQError, ValueError):
    module = "model"


class DimensionMismatch(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class NonInvertibleJumpMap(ModelError):
    pass


class AsymmetricWeight(ModelError):
    pass


class BadGrid(ModelError):
    pass


class BadProbabilities(ModelError):
    pass


class NonFiniteState(JumpLQError, FloatingPointError):
    module = "sdep"

    def __init__(self, path, time, message="non-finite state"):
        self.path = int(path)
        self.time = float(time)
        super().__init__(f"{message} on path {self.path} at t={self.time:.6g}")


class RiccatiError(JumpLQError):
    module = "riccati"


class NotUniformlyConvex(RiccatiError):
    def __init__(self, t, min_eig):
        self.t = float(t)
        self.min_eig = float(min_eig)
        super().__init__(
            f"NotUniformlyConvex at t={self.t:.6g}: smallest eigenvalue of N is {self.min_eig:.6g}"
        )


class NonFiniteKernel(RiccatiError, FloatingPointError):
    pass


class SingularInnerMatrix(RiccatiError):
    pass


class OutOfRange(JumpLQError, ValueError):
    pass


class ConfigError(JumpLQError, ValueError):
    module = "cli"


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
