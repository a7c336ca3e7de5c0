"""Exception types raised across the package."""


class VTAError(ValueError):
    """Base class for every error raised by :mod:`vta`."""


class DimensionError(VTAError):
    pass


class EmptySequenceError(VTAError):
    pass


class ParamError(VTAError):
    pass


class DegeneratePriorError(VTAError):
    pass


class SupportError(VTAError):
    """KL divergence is infinite: plan puts mass where the prior has none."""


class StateError(VTAError):
    pass


class DegenerateError(VTAError):
    pass


class SamplingError(VTAError):
    """A phase is missing from the sampled training subset; retry with another seed."""


class ConfigError(VTAError):
    pass


class ParseError(VTAError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, message="loss became non-finite"):
        super().__init__(f"{message} at step {step}")
        self.step = step
