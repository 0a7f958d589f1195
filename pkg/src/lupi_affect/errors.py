"""Exception hierarchy shared by all subpackages."""


class LupiError(Exception):
    """Base class for errors raised by lupi_affect."""


class ConfigurationError(LupiError, ValueError):
    pass


class SchemaError(ConfigurationError):
    """A config file is missing a field or has a field of the wrong type."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(ConfigurationError):
    pass


class EmptyDatasetError(LupiError):
    pass


class WindowRejectedError(LupiError):
    """A single window cannot be populated (no samples of some stream inside it)."""


class CorpusFormatError(LupiError):
    """The on-disk corpus violates the adapter contract.

    ``diagnostics`` holds one human-readable line per offending file/row.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("malformed corpus:\n  " + "\n  ".join(self.diagnostics))


class ModalityAccessError(LupiError):
    """A pixel-only model tried to read privileged features."""


class NonFiniteLossError(LupiError):
    def __init__(self, epoch, batch, components):
        self.epoch = epoch
        self.batch = batch
        self.components = dict(components)
        parts = ", ".join(f"{k}={v}" for k, v in self.components.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} ({parts})")


class UndefinedCorrelationError(LupiError, ValueError):
    pass
