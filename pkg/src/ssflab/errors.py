"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Scenario configuration is malformed; message carries the field path."""


class FactorizationBreakdown(RuntimeError):
    """Symmetric factorization hit a (near-)zero pivot even after retries."""

    def __init__(self, pivot_index: int, shift: float):
        self.pivot_index = pivot_index
        self.shift = shift
        super().__init__(
            f"factorization breakdown at pivot {pivot_index} (shift E={shift!r})"
        )


class OracleCapExceeded(ValueError):
    """Dense-spectrum oracle requested above the configured dimension cap."""
