"""Exception hierarchy shared by all modules."""


class ImageMoodError(Exception):
    """Base class for package errors."""


class InvalidInputError(ImageMoodError, ValueError):
    pass


class ConfigError(ImageMoodError, ValueError):
    pass


class DegenerateColumnError(ImageMoodError, ValueError):
    """A column (or residual) has zero variance where variation is required."""


class CollinearityError(ImageMoodError, ValueError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class StandardizationError(DegenerateColumnError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class ConvergenceError(ImageMoodError, RuntimeError):
    def __init__(self, message, kkt_residual, n_iter):
        super().__init__(message)
        self.kkt_residual = kkt_residual
        self.n_iter = n_iter


class SchemaError(ImageMoodError, ValueError):
    pass


class InsufficientDataError(ImageMoodError, ValueError):
    pass


class ValidationError(ImageMoodError):
    """Manifest validation failed; ``issues`` itemizes every problem found."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__(
            "%d validation issue(s):\n  %s" % (len(self.issues), "\n  ".join(self.issues))
        )


class FixtureMissError(ImageMoodError, KeyError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("fixture has no tags for: %s" % ", ".join(self.missing))
