class ConfigurationError(ValueError):
    """Invalid configuration or arguments; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class AggregationError(RuntimeError):
    """Nothing to aggregate; the caller keeps its previous model."""


class ContractViolation(AssertionError):
    """A caller broke an interface precondition (length mismatch, non-neighbor send)."""
