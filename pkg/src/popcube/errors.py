"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
data problems exit 3.
"""


class PopcubeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PopcubeError):
    """Invalid configuration (scenario, pipeline, or scheme parameters)."""


class InvalidExtentError(PopcubeError):
    """Degenerate geographic extent (zero or negative width/height)."""


class OutOfRangeError(PopcubeError):
    """Cell id or slice index outside the lattice/cube."""


class SchemaError(PopcubeError):
    """Input file is missing required columns or malformed headers."""


class RowParseError(PopcubeError):
    """A data row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int, source: str = "<stream>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


class DuplicateRowError(PopcubeError):
    """Two rows map to the same (timestamp, cell) key."""

    def __init__(self, message: str, lines: tuple[int, int]):
        super().__init__(f"{message} (lines {lines[0]} and {lines[1]})")
        self.lines = lines


class NoOverlapError(PopcubeError):
    """Source and target extents do not overlap."""


class ZoneOverlapError(PopcubeError):
    """Zonal polygons overlap; lists the offending zone-id pairs."""

    def __init__(self, pairs):
        self.pairs = sorted(set(pairs))
        names = ", ".join(f"({a}, {b})" for a, b in self.pairs)
        super().__init__(f"overlapping zones: {names}")


class EmptyInputError(PopcubeError):
    """An operation received no usable input records."""


class EmptyRegionError(PopcubeError):
    """A regional aggregate was requested over an empty cell mask."""


class NoStampError(PopcubeError):
    """No timestamp in the input snaps to a canonical time-of-day stamp."""


class DegenerateFitError(PopcubeError):
    """Regression input has no variance in x (or too few points)."""


class UndefinedRateError(PopcubeError):
    """Penetration rate is undefined (non-positive reference population)."""


class TooShortError(PopcubeError):
    """Series or cube too short for the requested statistic."""


class TooSparseError(PopcubeError):
    """Too few non-missing cells for a spatial statistic."""
