"""Exception hierarchy.

Every error raised for bad data, bad configuration or a numerical failure
derives from :class:`ShmError`.  The CLI maps these to exit status 1 and
serialises ``to_dict()`` on stderr.
"""
from __future__ import annotations


class ShmError(Exception):
    """Base class for domain errors; ``details`` holds machine-readable context."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), **self.details}


class ConfigurationError(ShmError, ValueError):
    pass


class BoundsError(ShmError, IndexError):
    pass


class NumericalError(ShmError, ArithmeticError):
    pass


class SingularSystemError(NumericalError):
    pass


class DegenerateReferenceError(NumericalError):
    pass


class SingularBaselineError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class DegenerateFeatureError(ShmError, ValueError):
    pass


class InvalidSplitError(ShmError, ValueError):
    pass


class LabelError(ShmError, ValueError):
    pass


class InputError(ShmError, ValueError):
    pass


class StageError(ShmError):
    """Wraps a failure inside :func:`shm_locate.pipeline.run_experiment`."""
