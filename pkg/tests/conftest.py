"""Shared fixtures: seeded generators and tiny double-precision configurations."""

import numpy as np
import pytest

from mprnet.models.config import ModelConfig
from mprnet.parser import RunConfigParser


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Two scales, one CAB everywhere; inputs must be multiples of 4."""
    return ModelConfig(
        base_width=4,
        n_scales=2,
        n_cabs_per_scale=1,
        n_orbs=2,
        n_cabs_per_orb=1,
        cab_reduction=2,
        activation="sigmoid",
        precision="float64",
        init_seed=3,
    )


@pytest.fixture
def tiny_run_config():
    """A run small enough to train for a few iterations inside a unit test."""
    return RunConfigParser().parse_dict({
        "base_width": 4,
        "n_scales": 2,
        "n_cabs_per_scale": 1,
        "n_orbs": 1,
        "n_cabs_per_orb": 1,
        "cab_reduction": 2,
        "precision": "float64",
        "patch_size": 16,
        "batch_size": 2,
        "iters": 3,
        "val_every": 2,
        "checkpoint_every": 2,
        "val_images": 2,
        "val_size": 16,
        "prefetch": 2,
        "lr_init": 1e-3,
        "lr_final": 1e-5,
    })


@pytest.fixture
def image_batch(rng):
    def make(n=1, h=8, w=8):
        from mprnet.autograd.tensor import Tensor

        return Tensor(rng.uniform(size=(n, 3, h, w)))

    return make
