"""Exception types shared across the package."""


class InputError(ValueError):
    """Input data violates an operation's preconditions."""


class SpecError(ValueError):
    """A model or experiment specification is not realisable."""


class ManifestError(InputError):
    """Malformed or inconsistent manifest; message carries the row / utterance id."""


class LoadError(OSError):
    """A data file (embedding table, checkpoint, cache) could not be parsed."""


class ConsistencyError(RuntimeError):
    """Internal invariant broken, e.g. fused vector width differs from the preset."""
