"""Exception types shared across the package."""


class DpsynthError(Exception):
    """Base class for all package errors."""


class MissingColumn(DpsynthError, KeyError):
    pass


class ParseError(DpsynthError, ValueError):
    def __init__(self, row: int, col: str, value: str):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"cannot parse {value!r} at row {row}, column {col!r}")


class EmptyDataset(DpsynthError, ValueError):
    pass


class InconsistentSpec(DpsynthError, ValueError):
    pass


class InvalidParams(DpsynthError, ValueError):
    pass


class Unachievable(DpsynthError, ValueError):
    """Requested privacy budget cannot be met within the search bracket."""


class EmptyState(DpsynthError, ValueError):
    pass


class NonFiniteLoss(DpsynthError, FloatingPointError):
    pass


class ShapeMismatch(DpsynthError, ValueError):
    pass


class UnbinnedInput(DpsynthError, ValueError):
    pass


class EmptyClass(DpsynthError, ValueError):
    pass


class BinMismatch(DpsynthError, ValueError):
    pass


class EmptyReference(DpsynthError, ValueError):
    pass


class NoValidPairs(DpsynthError, ValueError):
    pass


class NodeSetMismatch(DpsynthError, ValueError):
    pass


class EmptyNetwork(DpsynthError, ValueError):
    pass


class EmptySet(DpsynthError, ValueError):
    pass


class ConfigError(DpsynthError, ValueError):
    pass


class ZeroVariance(DpsynthError, ValueError):
    pass
