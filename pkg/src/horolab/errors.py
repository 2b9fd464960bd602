"""Exception hierarchy shared across horolab."""


class HorolabError(Exception):
    """Base class for all horolab errors."""


class AsymmetryError(HorolabError):
    """A matrix is too far from symmetric to be repaired by averaging."""


class ModelError(HorolabError):
    """A curvature model is malformed or produces non-finite values."""


class NumericalError(HorolabError):
    """Base class for failures of a numerical experiment (CLI exit code 3)."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class NumericalBlowupError(NumericalError):
    pass


class ConjugatePointError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class NoConvergenceError(NumericalError):
    pass


class FinitenessError(NumericalError):
    pass


class SingularVError(NumericalError):
    pass


class HarmonicityError(NumericalError):
    """Sampled mean curvature of horospheres is not constant."""


class ConfigError(HorolabError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        super().__init__("; ".join(errors))
        self.errors = list(errors)
