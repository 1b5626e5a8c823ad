from .config import DegradeSpec, LossConfig, ModelConfig, OptimConfig, RunConfig, TrainConfig

__all__ = ["DegradeSpec", "LossConfig", "ModelConfig", "OptimConfig", "RunConfig", "TrainConfig"]
