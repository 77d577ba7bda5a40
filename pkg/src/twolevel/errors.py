"""Exception types shared across the package.

Config problems raise ConfigError subclasses (CLI exit code 2); runtime
numerical problems raise NumericalError subclasses (CLI exit code 3).
"""


class TwoLevelError(Exception):
    pass


class ConfigError(TwoLevelError):
    pass


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    """Invalid config value; message carries the field path and reason."""

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class UnknownRateForm(ConfigError):
    pass


class NumericalError(TwoLevelError):
    pass


class EnvelopeViolated(NumericalError):
    pass


class BadMatrix(ConfigError):
    pass


class EllipticityViolated(NumericalError):
    pass


class RejectionStall(NumericalError):
    pass


class Extinct(TwoLevelError):
    """Total event rate is zero; the caller must stop or fast-forward."""


class EventBudgetExceeded(NumericalError):
    pass


class StepFailure(NumericalError):
    pass


class PicardDiverged(NumericalError):
    pass


class CFLViolation(NumericalError):
    pass


class NegativeDensity(NumericalError):
    pass


class TierMismatch(TwoLevelError):
    pass


class DegenerateSeries(NumericalError):
    pass
