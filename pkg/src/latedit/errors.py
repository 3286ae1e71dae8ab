"""Exception taxonomy shared across the package."""


class LateditError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(LateditError, ValueError):
    """Two tensors that must share a shape do not."""


class InputError(LateditError, ValueError):
    """Malformed user-supplied data (geometry, latents, masks, ...)."""


class BackendUnavailableError(LateditError, RuntimeError):
    """A pretrained-weights adapter was requested but its weights are not
    installed.  The message describes the expected weights layout."""


class CapabilityError(LateditError, ValueError):
    """A prior was asked for a conditioning mode it does not support."""


class TokenNotFoundError(LateditError, ValueError):
    """The attention token does not occur in the instruction text."""


class InstructionError(LateditError, ValueError):
    """An instruction is unknown to the editor, or is missing fields
    required by its edit kind."""


class DatasetError(LateditError, ValueError):
    """Dataset construction produced no usable entries."""


class DivergenceError(LateditError, RuntimeError):
    """Training aborted because losses became non-finite."""


class SessionNotFoundError(LateditError, KeyError):
    """No session with the requested id exists in the store."""


class ConfigError(LateditError, ValueError):
    """A configuration file could not be parsed into valid settings."""
