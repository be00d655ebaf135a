"""Direction-conditioned waveform separation network."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    MODES,
    AssembledInput,
    DirectionalDemucs,
    ModelConfig,
    ScaledDirection,
    assemble_input,
    build_model,
    expected_param_count,
    forward,
    l1_loss,
    scale_direction,
    separate,
    separate_many,
    valid_length,
)
from .train import (
    PlateauScheduler,
    TrainHistory,
    TrainHyper,
    TrainingDiverged,
    dataset_loss,
    gradient_check,
    perturb_target,
    train,
)

__all__ = [
    "AssembledInput",
    "CheckpointError",
    "DirectionalDemucs",
    "MODES",
    "ModelConfig",
    "PlateauScheduler",
    "ScaledDirection",
    "TrainHistory",
    "TrainHyper",
    "TrainingDiverged",
    "assemble_input",
    "build_model",
    "dataset_loss",
    "expected_param_count",
    "forward",
    "gradient_check",
    "l1_loss",
    "load_checkpoint",
    "perturb_target",
    "save_checkpoint",
    "scale_direction",
    "separate",
    "separate_many",
    "train",
    "valid_length",
]
