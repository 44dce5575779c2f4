"""Exception hierarchy.

Every error carries a short ``code`` and the CLI maps each class to its own
exit status, so scripted callers can tell failure classes apart.
"""


class AmauditError(Exception):
    code = "error"
    exit_code = 1


class ValidationError(AmauditError, ValueError):
    """Input values or shapes violate an operation's preconditions."""

    code = "invalid-input"
    exit_code = 2


class DimensionMismatchError(ValidationError):
    code = "dimension-mismatch"


class AnnotationError(AmauditError):
    code = "annotation"
    exit_code = 3


class AnnotationMissingError(AnnotationError, FileNotFoundError):
    code = "annotation-missing"


class AnnotationChannelError(AnnotationError):
    code = "annotation-channels"


class AnnotationShapeError(AnnotationError, DimensionMismatchError):
    code = "annotation-shape"


class UnknownLayerError(ValidationError, KeyError):
    code = "unknown-layer"

    def __str__(self):
        return Exception.__str__(self)


class InvalidClassError(ValidationError, IndexError):
    code = "invalid-class"


class MissingMapError(AmauditError, KeyError):
    code = "missing-map"
    exit_code = 2

    def __str__(self):
        return Exception.__str__(self)


class ConfigError(AmauditError):
    """Run configuration is malformed or a metric's prerequisites are absent."""

    code = "config"
    exit_code = 2


class DatasetError(AmauditError):
    code = "dataset"
    exit_code = 3


class FixtureError(AmauditError):
    """The synthetic fixture could not be built to its quality floor."""

    code = "fixture"
    exit_code = 4


class OutputError(AmauditError):
    code = "output"
    exit_code = 5
