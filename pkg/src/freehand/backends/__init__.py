from .encoders import build_encoder, encoder_names, register_encoder
from .models import BackendSpec, InputMismatchError, SequenceModel
from .training import TrainConfig, TrainingDivergedError, TrainingLog, build_model, train

__all__ = [
    "BackendSpec",
    "InputMismatchError",
    "SequenceModel",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingLog",
    "build_encoder",
    "build_model",
    "encoder_names",
    "register_encoder",
    "train",
]
