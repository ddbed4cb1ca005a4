"""Exception types shared across the package."""


class HairshiftError(Exception):
    """Base class for package-specific errors."""


class InputError(HairshiftError):
    """A required input (mask, keypoints, ...) is missing or malformed."""


class TrainingDivergedError(HairshiftError):
    """A loss became non-finite during training."""

    def __init__(self, message, iteration=None, diagnostics=None):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics or {}


class EmptyDatasetError(HairshiftError):
    """An operation that draws samples was handed an empty dataset."""


class DatasetFormatError(HairshiftError):
    """A dataset directory is missing files or contains malformed ones."""


class CheckpointError(HairshiftError):
    """Base class for checkpoint load/save failures."""


class CheckpointCorruptError(CheckpointError):
    """The checkpoint file is truncated or has an invalid layout."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


class ConfigMismatchError(CheckpointError):
    """The checkpoint's embedded config hash differs from the expected one."""
