"""Exception types raised across the registration pipeline."""


class RegistrationError(Exception):
    """Base class for all library errors."""


class NumericalOverflow(RegistrationError, ValueError):
    pass


class EmptyModel(RegistrationError):
    """Every mixture component fell below the weight floor."""


class SingularCovariance(RegistrationError, ValueError):
    pass


class DegenerateWeights(RegistrationError, ValueError):
    """Outlier weight leaves no mass for real components."""


class NoMatches(RegistrationError):
    """No cluster pair cleared the confidence threshold."""


class NoCorrespondences(RegistrationError):
    pass


class DegenerateConfiguration(RegistrationError, ValueError):
    """Correspondences are collinear or coincident."""


class NoConsensus(RegistrationError):
    pass


class ParseError(RegistrationError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatch(RegistrationError, ValueError):
    pass


class DegenerateNeighborhood(UserWarning):
    """Warning category: some neighborhoods have zero spatial extent."""


class StageError(RegistrationError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
