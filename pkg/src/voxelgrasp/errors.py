"""Exception hierarchy shared across the toolkit.

Every domain failure derives from ToolkitError so callers (and the CLI)
can distinguish domain errors from programming errors.
"""


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""


class EmptyInput(ToolkitError):
    """An operation received an empty cloud, file, or sample set."""


class EmptyResult(ToolkitError):
    """An operation produced an empty result where one is not allowed."""


class OutOfBounds(ToolkitError):
    """A point falls outside the voxel grid it is being binned into."""


class FrameMismatch(ToolkitError):
    """A cloud is not expressed in the frame a grid expects."""


class DegenerateInput(ToolkitError):
    """Input lacks the geometric variety the operation requires."""


class DegenerateSegment(ToolkitError):
    """A segment's endpoints coincide."""


class ParseError(ToolkitError):
    """A point-cloud or manifest file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownCategory(ToolkitError):
    """Requested object category is not one the generator knows."""


class InsufficientData(ToolkitError):
    """Not enough samples (or degenerate ratios) to form a split."""


class ShapeError(ToolkitError):
    """Array shapes are inconsistent with the operation's contract."""


class BatchTooSmall(ToolkitError):
    """Batch normalization in training mode needs at least 2 samples."""


class CacheMismatch(ToolkitError):
    """A backward pass received a cache from a different forward pass."""


class TrainingDiverged(ToolkitError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class CorruptCheckpoint(ToolkitError):
    """Checkpoint file is truncated or fails its checksum."""


class UnsupportedVersion(ToolkitError):
    """Checkpoint format version is not readable by this build."""


class TooManyClusters(ToolkitError):
    """Requested more k-means clusters than there are points."""


class NoAffordance(ToolkitError):
    """The labeled cloud contains no affordance points to plan on."""


class NoFeasibleApproach(ToolkitError):
    """Table filtering removed every candidate approach path."""


class TableCollision(ToolkitError):
    """No roll adjustment clears the gripper from the table."""


class NoPlan(ToolkitError):
    """A grasp evaluation was asked to run on an empty plan."""
