"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CaptionKitError(Exception):
    exit_code = 1


class UsageError(CaptionKitError, ValueError):
    exit_code = 1


class DataError(CaptionKitError):
    exit_code = 2


class FormatError(DataError, ValueError):
    """Malformed file contents (PPM, manifest, checkpoint)."""


class EmptyDatasetError(DataError):
    pass


class NumericError(CaptionKitError, ArithmeticError):
    exit_code = 3


class DimensionError(CaptionKitError, ValueError):
    exit_code = 2


class UndefinedMetricError(DataError, ValueError):
    pass
