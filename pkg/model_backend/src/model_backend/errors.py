"""Errors raised by this package (protocol errors come from promptcount)."""


class ModelBackendError(Exception):
    """Base class for configuration and lifecycle failures."""


class CheckpointError(ModelBackendError):
    """Weights missing or unreadable; the message says how to get them."""
