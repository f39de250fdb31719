"""Typed training and checkpoint errors."""


class TrainingError(RuntimeError):
    """Optimization aborted (non-finite loss or invalid run state)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable or inconsistent."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before the declared payload does."""


class CheckpointShapeError(CheckpointError):
    """Stored parameters do not line up with the target model."""
