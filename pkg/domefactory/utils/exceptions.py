class DegenerateConfigurationError(ValueError):
    """Point correspondences do not determine a rigid transform."""


class NonWatertightMeshError(ValueError):
    """Mesh has edges not shared by exactly two triangles."""


class CheckpointError(RuntimeError):
    """Checkpoint file cannot be loaded into the current model / config."""


class TrainingDivergedError(RuntimeError):
    """Training loss stayed far above its initial value."""


class StageError(RuntimeError):
    """A pipeline stage failed, usually because an upstream artifact is missing."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__("stage '" + str(stage) + "': " + str(message))
