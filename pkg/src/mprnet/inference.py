"""Inference on arbitrary image sizes: reflect-pad to the model's multiple, run, crop back."""

import logging
from typing import List, Optional, Tuple

import numpy as np

from .autograd.tensor import Tensor
from .errors import UsageError
from .network import MPRNet

logger = logging.getLogger(__name__)


def pad_reflect(img: np.ndarray, multiple: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Reflect-pad a (3, h, w) image at the bottom/right up to multiples of ``multiple``."""
    _, h, w = img.shape
    pad_h, pad_w = (-h) % multiple, (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return img, (h, w)
    mode = "reflect" if pad_h < h and pad_w < w else "symmetric"
    return np.pad(img, ((0, 0), (0, pad_h), (0, pad_w)), mode=mode), (h, w)


def restore(model: MPRNet, img: np.ndarray, exit_stage: Optional[int] = None) -> List[Tuple[int, np.ndarray]]:
    """
    Restore one (3, h, w) image.

    Returns (stage, restored image) for every stage up to ``exit_stage``
    (all stages when omitted), each cropped back to (3, h, w).
    """
    last = model.n_stages if exit_stage is None else exit_stage
    if not 1 <= last <= model.n_stages:
        raise UsageError(f"exit_stage must be in [1, {model.n_stages}], got {exit_stage}")
    padded, (h, w) = pad_reflect(img, model.config.spatial_multiple)
    batch = Tensor(padded[None], dtype=model.dtype)
    results = []
    for output in model.iter_stages(batch):
        results.append((output.stage, output.x_s.data[0, :, :h, :w]))
        if output.stage == last:
            break
    if padded.shape != img.shape:
        logger.debug("Padded %s to %s for inference", img.shape, padded.shape)
    return results
