"""Exception hierarchy shared across the package."""


class SlideRegError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SlideRegError):
    """An input file is unreadable or violates the supported format subset."""


class ConfigError(SlideRegError):
    """A configuration document is syntactically or semantically invalid.

    ``path`` is the dotted key path of the offending entry (empty for
    document-level problems such as JSON syntax errors).
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class NumericalError(SlideRegError):
    """A numerical contract was violated (singular transform, divergence)."""


class PipelineError(SlideRegError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
