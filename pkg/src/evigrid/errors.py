"""Exception types shared across the package."""


class EvigridError(Exception):
    """Base class for all package errors."""


class FullConflictError(EvigridError):
    """Dempster combination of two fully contradicting mass functions."""


class GridGeometryError(EvigridError):
    """Two grids that must share a geometry do not."""


class AggregationBudgetError(EvigridError):
    """Frame aggregation would exceed the allowed spatial error budget."""


class UnknownSensorError(EvigridError):
    """A sensor id is not part of the scenario."""


class ScenarioError(EvigridError):
    """A scenario description is malformed or inconsistent."""


class ConfigError(EvigridError):
    """A pipeline configuration is malformed."""


class EgridFormatError(EvigridError):
    """An EGRID file is malformed or truncated."""


class EnetError(EvigridError):
    """Base class for network weights file errors."""


class EnetMagicError(EnetError):
    """Weights file does not start with the expected magic bytes."""


class EnetSizeError(EnetError):
    """Weights file is truncated or carries trailing bytes."""


class EnetTopologyError(EnetError):
    """Layer chain is inconsistent (channels, scale, or terminal layer)."""


class EnetLayerKindError(EnetError):
    """Weights file declares an unsupported layer kind."""
