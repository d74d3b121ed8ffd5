"""Exception types shared across the package."""


class PromptCountError(Exception):
    """Base class for all package-specific errors.

    When a counting run dies mid-grid, the pipeline attaches the stats
    gathered so far as ``partial_stats`` before re-raising.
    """

    partial_stats = None


class MalformedBlobError(PromptCountError):
    """Binary tensor container failed validation."""


class MalformedRleError(PromptCountError):
    """Run-length payload is inconsistent with its declared dimensions."""


class MalformedPromptError(PromptCountError):
    """Prompt set violates the input contract (e.g. no prompt family)."""


class NoComponentError(PromptCountError):
    """A connected-component query ran against an empty label map."""


class NoReferenceError(PromptCountError):
    """No usable reference mask could be derived from the given prompts."""


class EmptyMaskError(PromptCountError):
    """An operation that averages over mask pixels received an empty mask."""


class UnknownFeatureError(PromptCountError):
    """Decode request referenced a feature id the backend has not served."""


class CapabilityError(PromptCountError):
    """Requested an operation the backend does not advertise."""


class BackendUnreachableError(PromptCountError):
    """The backend endpoint could not be reached."""


class BackendRequestError(PromptCountError):
    """The backend rejected a request (malformed input, unknown id, ...)."""
