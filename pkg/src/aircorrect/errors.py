"""Exception hierarchy shared by all aircorrect modules."""


class AirCorrectError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(AirCorrectError):
    """Input file header is missing required columns."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing required column(s): " + ", ".join(self.missing))


class ParseError(AirCorrectError):
    """A cell could not be parsed; ``line`` is the 1-based file line."""

    def __init__(self, line, column, value):
        self.line = line
        self.column = column
        super().__init__(f"line {line}: cannot parse {column}={value!r}")


class DataQualityError(AirCorrectError):
    pass


class DegenerateFeatureError(AirCorrectError):
    """Raised when a min-max scaler would have max == min."""


class EmptyDatasetError(AirCorrectError):
    pass


class ConfigError(AirCorrectError):
    pass


class DimensionError(AirCorrectError, ValueError):
    pass


class DivergenceError(AirCorrectError, FloatingPointError):
    pass


class ConsistencyError(AirCorrectError):
    """Two inputs that must be aligned (rows, scalers) are not."""


class UndefinedMetricError(AirCorrectError, ValueError):
    pass


class BundleFormatError(AirCorrectError):
    pass


class UnsupportedVersionError(BundleFormatError):
    pass
