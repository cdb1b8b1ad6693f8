"""Exception hierarchy shared across the package.

Every error raised on purpose derives from SkycastError and carries a
``category`` string used by the CLI to map failures to exit codes and a
machine-readable error line.
"""


class SkycastError(Exception):
    """Base class for all package errors."""

    category = "runtime"


class DomainError(SkycastError):
    """An argument violates a documented precondition."""

    category = "domain"


class OutOfRangeError(DomainError):
    """A value falls outside the grid or horizon it must map into."""

    category = "out-of-range"


class ConfigurationError(SkycastError):
    """A config value or combination of values is invalid."""

    category = "config"


class InsufficientHistoryError(SkycastError):
    """A flight lacks the same-weekday predecessors its window needs."""

    category = "insufficient-history"


class GapError(SkycastError):
    """A daily series has a missing date."""

    category = "gap"


class FitError(SkycastError):
    """A statistical or neural fit failed; carries diagnostics text."""

    category = "fit"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MarketLookupError(SkycastError):
    """A market id is unknown to the normalizer or dataset."""

    category = "lookup"


class ShapeError(SkycastError):
    """Array shapes are inconsistent with the model or grid contract."""

    category = "shape"


class DataIntegrityError(SkycastError):
    """Stored or supplied data violates an invariant (e.g. sentinel in a label)."""

    category = "data-integrity"


class MissingInputError(SkycastError):
    """A referenced artifact does not exist or cannot be parsed."""

    category = "missing-input"
