"""Exception hierarchy shared by all memlab modules."""


class MemlabError(Exception):
    """Base class for every error raised by memlab."""


class InvalidParameter(MemlabError, ValueError):
    def __init__(self, field, value, reason=""):
        self.field = field
        self.value = value
        msg = f"invalid value for {field!r}: {value!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class NoCompatibleData(MemlabError):
    """Corrector slope iteration did not converge."""


class NegativeState(MemlabError):
    pass


class StepRejected(MemlabError):
    pass


class Blowup(MemlabError):
    """Solution exceeded the configured cap; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TimeTooSmall(MemlabError, ValueError):
    pass


class KernelEvalFailed(MemlabError):
    pass


class NoContraction(MemlabError):
    def __init__(self, message, increments=()):
        super().__init__(message)
        self.increments = list(increments)


class WindowEmpty(MemlabError):
    pass


class NoSupersolution(MemlabError):
    pass


class RegimeMismatch(MemlabError):
    pass


class SearchFailed(MemlabError):
    """Parameter search exhausted; ``best`` holds the least-violating candidate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class HypothesisUnmet(MemlabError):
    pass


class MonotonicityViolated(MemlabError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ConfigError(MemlabError):
    pass
