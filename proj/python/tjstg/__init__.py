"""Target-aware joint spatio-temporal grounding on synthetic audio-visual scenes.

Thin wrapper over the C++ core; see the project README for the file formats
and the CLI equivalents of these entry points.
"""

from tjstg._core import (
    ContractError,
    IoError,
    Model,
    ModelConfig,
    QuestionKind,
    ShapeError,
    TaskConfig,
    TrainConfig,
    evaluate,
    generate_dataset,
    generate_scene,
    gradcheck_tiny,
    js_divergence,
    kl_divergence,
    load_tensor,
    lr_schedule,
    save_tensor,
    softmax,
    train_two_stage,
)

__all__ = [
    "ContractError",
    "IoError",
    "Model",
    "ModelConfig",
    "QuestionKind",
    "ShapeError",
    "TaskConfig",
    "TrainConfig",
    "evaluate",
    "generate_dataset",
    "generate_scene",
    "gradcheck_tiny",
    "js_divergence",
    "kl_divergence",
    "load_tensor",
    "lr_schedule",
    "save_tensor",
    "softmax",
    "train_two_stage",
]
