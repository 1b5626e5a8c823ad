"""Semantic validation of run configurations across groups."""

import logging
from pathlib import Path
from typing import List, Tuple

from .metrics import SSIM_MIN_SIZE
from .models.config import RunConfig

logger = logging.getLogger(__name__)


class ConfigValidator:
    """Check invariants that span several config groups."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.model = config.model
        self.train = config.train
        self.optim = config.optim
        self.degrade = config.degrade

    def validate(self) -> Tuple[bool, List[str]]:
        """
        Run all validation checks.

        Returns:
            Tuple of (is_valid, list_of_errors)
        """
        errors = []
        errors.extend(self._validate_patch_geometry())
        errors.extend(self._validate_widths())
        errors.extend(self._validate_schedule())
        errors.extend(self._validate_degradation())
        errors.extend(self._validate_data_source())
        for error in errors:
            logger.debug("Config check failed: %s", error)
        return len(errors) == 0, errors

    def _validate_patch_geometry(self) -> List[str]:
        """Training and validation images must split into patches that still halve per scale."""
        errors = []
        multiple = self.model.spatial_multiple
        for name in ("patch_size", "val_size"):
            size = getattr(self.train, name)
            if size % multiple:
                errors.append(
                    f"{name}={size} must be divisible by {multiple} "
                    f"(2 for the patch split times 2^(n_scales-1) for pooling with n_scales={self.model.n_scales})"
                )
        if self.train.val_size < SSIM_MIN_SIZE:
            errors.append(f"val_size={self.train.val_size} is below the {SSIM_MIN_SIZE}px SSIM window")
        return errors

    def _validate_widths(self) -> List[str]:
        errors = []
        for scale, width in enumerate(self.model.widths):
            if width % self.model.cab_reduction:
                errors.append(f"width {width} at scale {scale} is not divisible by cab_reduction={self.model.cab_reduction}")
        return errors

    def _validate_schedule(self) -> List[str]:
        errors = []
        if self.optim.lr_final > self.optim.lr_init:
            errors.append(f"lr_final={self.optim.lr_final} exceeds lr_init={self.optim.lr_init}")
        if self.optim.total_iters is not None and self.optim.total_iters < self.train.iters:
            errors.append(f"total_iters={self.optim.total_iters} is smaller than iters={self.train.iters}")
        return errors

    def _validate_degradation(self) -> List[str]:
        errors = []
        kind = self.degrade.degradation
        patch = min(self.train.patch_size, self.train.val_size)
        if kind == "box_blur" and self.degrade.blur_size > patch:
            errors.append(f"blur_size={self.degrade.blur_size} exceeds the patch size {patch}")
        if kind == "motion_blur" and self.degrade.motion_length > patch:
            errors.append(f"motion_length={self.degrade.motion_length} exceeds the patch size {patch}")
        return errors

    def _validate_data_source(self) -> List[str]:
        errors = []
        if self.train.train_dir and not Path(self.train.train_dir).is_dir():
            errors.append(f"train_dir '{self.train.train_dir}' is not a directory")
        return errors


def validate_config(config: RunConfig) -> Tuple[bool, List[str]]:
    """
    Validate a run configuration.

    Args:
        config: Parsed RunConfig object

    Returns:
        Tuple of (is_valid, list_of_errors)
    """
    validator = ConfigValidator(config)
    return validator.validate()
