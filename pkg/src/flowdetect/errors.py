"""Exception types shared across the package."""

from __future__ import annotations


class FlowdetectError(Exception):
    """Base class for all package errors."""


class SpecificationError(FlowdetectError):
    """A machine specification is malformed (bad reference, arity, shadowing)."""


class EngineError(FlowdetectError):
    """Internal inconsistency, e.g. a runtime state that does not match its spec."""


class InputError(FlowdetectError):
    """Event or file input that cannot be processed."""


class ConfigurationError(FlowdetectError):
    """Invalid or unknown configuration value."""


class NotEnoughDataError(FlowdetectError):
    """A model was asked to fit on fewer samples than it requires."""


class NotFittedError(FlowdetectError):
    """A model was asked to score before it was fitted."""
