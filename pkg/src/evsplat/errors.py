"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary bad arguments; the classes here
exist where callers need to tell failure modes apart (CLI exit paths,
dataset validation, training).
"""


class EvsplatError(Exception):
    """Base class for all package-specific errors."""


class MalformedStreamError(EvsplatError, ValueError):
    """An event stream violates its invariants (ordering, window, bounds)."""


class InvalidSceneError(EvsplatError, ValueError):
    """A scene contains non-finite or otherwise unusable parameters."""


class InvalidSpecError(EvsplatError, ValueError):
    """A synthetic dataset specification cannot be realized."""


class ManifestError(EvsplatError, ValueError):
    """A dataset manifest or a file it references failed validation.

    Messages include the offending path (and line number where one exists).
    """


class TrainingDivergedError(EvsplatError, RuntimeError):
    """The training loss became non-finite."""


class ModeUnavailableError(EvsplatError, RuntimeError):
    """An evaluation mode lacks the ground truth it needs."""
