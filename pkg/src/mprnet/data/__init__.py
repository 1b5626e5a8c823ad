"""Clean-image sources, degradations, patch sampling and image files."""

from .degrade import degrade, motion_kernel
from .imageio import find_pairs, list_images, read_image, write_image
from .sampling import BatchPrefetcher, TrainingData, augment_flip, flip_pair, sample_patch
from .textures import procedural_image

__all__ = [
    "BatchPrefetcher",
    "TrainingData",
    "augment_flip",
    "degrade",
    "find_pairs",
    "flip_pair",
    "list_images",
    "motion_kernel",
    "procedural_image",
    "read_image",
    "sample_patch",
    "write_image",
]
