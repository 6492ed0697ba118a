"""Exception taxonomy shared across the package."""


class LatentDriveError(Exception):
    """Base class for all package-specific errors."""


class InvalidParamsError(LatentDriveError, ValueError):
    """Geometry or configuration parameters outside documented ranges."""


class UnknownSegmentError(LatentDriveError, KeyError):
    """Referenced a segment id that does not exist in the layout."""


class OffRoadError(LatentDriveError, ValueError):
    """Point is not within two lane widths of any segment."""


class PlacementFailureError(LatentDriveError, RuntimeError):
    """Could not place vehicles without overlap within the retry budget."""


class StepAfterDoneError(LatentDriveError, RuntimeError):
    """step() called on a finished episode."""


class ShapeMismatchError(LatentDriveError, ValueError):
    """Tensor shape incompatible with the layer or model."""


class MissingCacheError(LatentDriveError, RuntimeError):
    """backward() called without a forward cache."""


class InsufficientDataError(LatentDriveError, RuntimeError):
    """Replay buffer holds fewer transitions than one batch."""


class EmptyDatasetError(LatentDriveError, ValueError):
    """Training requested on an empty dataset."""


class EmptyBatchError(LatentDriveError, ValueError):
    """Latent batch statistic requested on an empty batch."""


class LatentRangeError(LatentDriveError, ValueError):
    """Stacked autoencoder input latents not confined to (0, 1)."""


class ConfigMismatchError(LatentDriveError, ValueError):
    """Experiment pieces configured inconsistently (e.g. encoder/VFAN shapes)."""


class MissingArtifactError(LatentDriveError, FileNotFoundError):
    """A required upstream artifact (checkpoint, dataset, report) is absent."""


class DatasetFormatError(LatentDriveError, ValueError):
    """Dataset or tensor file failed format validation."""
