"""Exception types raised across the package."""


class AMSHEError(ValueError):
    """Base class for all validation and runtime errors of this package."""


class ConfigError(AMSHEError):
    """Invalid or malformed experiment configuration.

    ``fields`` holds the dotted config paths involved, when known.
    """

    def __init__(self, message, fields=(), line=None):
        self.fields = tuple(fields)
        self.line = line
        where = f" (line {line})" if line is not None else ""
        names = f" [{', '.join(self.fields)}]" if self.fields else ""
        super().__init__(f"{message}{names}{where}")


class UnsupportedWhiteNoise(ConfigError):
    pass


class KernelTooWide(AMSHEError):
    pass


class UnresolvableKernel(AMSHEError):
    pass


class MemoryBudgetExceeded(AMSHEError):
    pass


class DegenerateMeasure(AMSHEError):
    pass


class DegenerateAlpha(AMSHEError):
    pass


class WhiteNoiseUnsupported(AMSHEError):
    """The Feynman-Kac representation needs a smooth covariance."""


class EmptySample(AMSHEError):
    pass


class DegenerateGrid(AMSHEError):
    pass


class NegativeSample(AMSHEError):
    pass


class SupercriticalBeta(AMSHEError):
    pass


class RunawayPath(AMSHEError):
    pass


class InsufficientConvergence(AMSHEError):
    pass


class SchemaVersionError(AMSHEError):
    pass
