"""Exception types shared across the toolkit."""


class GuardsiftError(Exception):
    """Base class for all toolkit errors."""


class EmptyTraceError(GuardsiftError):
    """An operation requires a non-empty trace."""


class NotNormalizedError(GuardsiftError):
    """A trace was expected to start at timestamp 0."""


class ParseError(GuardsiftError):
    """A log line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NoMainCircuitError(GuardsiftError):
    """No candidate circuit survived main-circuit selection."""


class EmptyAfterTrimError(GuardsiftError):
    """Trimming removed every cell of a trace."""


class NoMonitoredDataError(GuardsiftError):
    """An operation requires at least one monitored trace."""


class EmptySegmentError(GuardsiftError):
    """A segmentation window contains no usable cells."""


class NotLinkedError(GuardsiftError):
    """A leg carries no link-handshake completion cell."""


class IndeterminateError(GuardsiftError):
    """Leg analysis cannot produce a verdict for this set."""


class LabelError(GuardsiftError):
    """A score record carries an invalid class label."""


class UndefinedRateError(GuardsiftError):
    """A rate denominator is zero."""


class UndefinedPrecisionError(GuardsiftError):
    """The r-precision denominator is zero."""


class NoPositivesError(GuardsiftError):
    """No monitored records exist, so F1 is undefined."""


class NoFeasibleThresholdError(GuardsiftError):
    """No decision threshold satisfies the FPR target."""


class ConfigError(GuardsiftError):
    """A scenario or pipeline configuration is invalid."""
