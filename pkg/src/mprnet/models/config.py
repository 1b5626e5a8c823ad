"""Pydantic models for run configuration."""

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..autograd.functional import ACTIVATIONS


class ModelConfig(BaseModel):
    """Network hyperparameters. Defaults for CAB/ORB counts follow the published setup."""
    model_config = ConfigDict(extra="forbid")

    base_width: int = Field(16, ge=1)
    n_scales: int = Field(3, ge=1, le=6)
    n_cabs_per_scale: int = Field(2, ge=1)
    n_orbs: int = Field(3, ge=1)
    n_cabs_per_orb: int = Field(8, ge=1)
    cab_reduction: int = Field(4, ge=1)
    n_stages: int = Field(3, ge=1, le=3)
    use_sam: bool = True
    use_csff: bool = True
    activation: str = "prelu"
    precision: Literal["float32", "float64"] = "float32"
    prelu_init: float = 0.25
    init_seed: Optional[int] = None

    @field_validator("activation")
    @classmethod
    def validate_activation(cls, v):
        if v not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {list(ACTIVATIONS)}, got '{v}'")
        return v

    @model_validator(mode="after")
    def validate_reduction(self):
        for width in self.widths:
            if width % self.cab_reduction:
                raise ValueError(
                    f"cab_reduction {self.cab_reduction} must divide every scale width {self.widths}"
                )
        return self

    @property
    def widths(self) -> List[int]:
        """Channel width per encoder-decoder scale (doubling from base_width)."""
        return [self.base_width * 2 ** s for s in range(self.n_scales)]

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    @property
    def spatial_multiple(self) -> int:
        """Input height/width multiple: quadrant patches must still halve n_scales - 1 times."""
        return 2 ** self.n_scales


class TrainConfig(BaseModel):
    """Training loop settings (desk-scale defaults)."""
    model_config = ConfigDict(extra="forbid")

    patch_size: int = Field(64, ge=2)
    batch_size: int = Field(4, ge=1)
    iters: int = Field(3000, ge=1)
    seed: int = 0
    augment_flips: bool = True
    val_every: int = Field(100, ge=1)
    checkpoint_every: int = Field(500, ge=1)
    val_images: int = Field(8, ge=1)
    val_size: int = Field(64, ge=2)
    train_dir: Optional[str] = None
    out_dir: str = "runs/latest"
    prefetch: int = Field(4, ge=1)


class OptimConfig(BaseModel):
    """Adam with cosine-annealed learning rate."""
    model_config = ConfigDict(extra="forbid")

    lr_init: float = 2e-4
    lr_final: float = 1e-6
    total_iters: Optional[int] = Field(None, ge=1)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def validate_schedule(self):
        if not 0 < self.lr_final <= self.lr_init:
            raise ValueError(f"need 0 < lr_final <= lr_init, got lr_final={self.lr_final}, lr_init={self.lr_init}")
        return self


class LossConfig(BaseModel):
    """Charbonnier epsilon and edge-loss weight."""
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(1e-3, gt=0.0)
    lambda_edge: float = Field(0.05, ge=0.0)


DegradationKind = Literal["gaussian_noise", "box_blur", "motion_blur", "rain_streaks"]


class DegradeSpec(BaseModel):
    """Synthetic degradation applied to clean images."""
    model_config = ConfigDict(extra="forbid")

    degradation: DegradationKind = "gaussian_noise"
    noise_sigma: float = Field(25.0 / 255.0, ge=0.0)
    blur_size: int = Field(5, ge=1)
    motion_length: int = Field(9, ge=1)
    motion_angle: float = 0.0
    rain_count: int = Field(40, ge=0)
    rain_length: int = Field(12, ge=1)
    rain_angle: float = 75.0
    rain_intensity: float = Field(0.8, ge=0.0, le=1.0)
    degrade_seed: int = 0

    @field_validator("blur_size", "motion_length")
    @classmethod
    def validate_odd(cls, v):
        if v % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {v}")
        return v


class RunConfig(BaseModel):
    """Every setting of a run, grouped by concern."""
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    degrade: DegradeSpec = Field(default_factory=DegradeSpec)

    @model_validator(mode="after")
    def fill_derived(self):
        if self.optim.total_iters is None:
            self.optim.total_iters = self.train.iters
        if self.model.init_seed is None:
            self.model.init_seed = self.train.seed
        return self


GROUPS: Dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "optim": OptimConfig,
    "loss": LossConfig,
    "degrade": DegradeSpec,
}
