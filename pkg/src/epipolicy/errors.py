"""Exception hierarchy shared by the simulation, cost and search layers."""


class EpipolicyError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EpipolicyError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ModelValidityError(EpipolicyError, ValueError):
    """Inputs would drive the model outside its stated validity range."""


class NumericalError(EpipolicyError, ArithmeticError):
    """Integration produced an invalid state.

    ``time`` carries the day at which the problem was detected.
    """

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (day {time})")
        self.time = time


class ConfigError(EpipolicyError, ValueError):
    """A scenario document failed schema or invariant validation."""

    def __init__(self, field, constraint, value=None):
        msg = f"{field}: {constraint}"
        if value is not None:
            msg += f" (got {value!r})"
        super().__init__(msg)
        self.field = field
        self.constraint = constraint
        self.value = value


class InfeasibleGridError(EpipolicyError):
    """No candidate of a search grid satisfies every constraint.

    ``least_violating`` is the candidate plan with the smallest peak ICU
    overshoot (or ``None`` when every candidate failed a static constraint),
    ``peak_icu`` its peak ICU load.
    """

    def __init__(self, message, least_violating=None, peak_icu=None):
        super().__init__(message)
        self.least_violating = least_violating
        self.peak_icu = peak_icu
