"""Procedural clean images: gradients, checkerboards and smoothed colour noise, blended."""

import logging
from typing import Callable, List

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)


def linear_gradient(size: int, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(0, 2 * np.pi)
    rows, cols = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    ramp = np.cos(angle) * cols + np.sin(angle) * rows
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    start, end = rng.uniform(0, 1, (2, 3, 1, 1))
    return start * (1 - ramp) + end * ramp


def checkerboard(size: int, rng: np.random.Generator) -> np.ndarray:
    period = int(rng.integers(4, max(5, size // 2)))
    rows, cols = np.mgrid[0:size, 0:size]
    phase_r, phase_c = rng.integers(0, period, 2)
    board = (((rows + phase_r) // period + (cols + phase_c) // period) % 2).astype(float)
    light, dark = rng.uniform(0, 1, (2, 3, 1, 1))
    return dark * (1 - board) + light * board


def smooth_noise(size: int, rng: np.random.Generator) -> np.ndarray:
    sigma = rng.uniform(1.0, max(1.5, size / 8))
    noise = ndimage.gaussian_filter(rng.uniform(0, 1, (3, size, size)), sigma=(0, sigma, sigma), mode="wrap")
    low = noise.min(axis=(1, 2), keepdims=True)
    span = np.maximum(noise.max(axis=(1, 2), keepdims=True) - low, 1e-12)
    return (noise - low) / span


GENERATORS: List[Callable[[int, np.random.Generator], np.ndarray]] = [linear_gradient, checkerboard, smooth_noise]


def procedural_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One unit-range (3, size, size) image: a random base texture blended with another."""
    base = GENERATORS[int(rng.integers(len(GENERATORS)))](size, rng)
    overlay = GENERATORS[int(rng.integers(len(GENERATORS)))](size, rng)
    weight = rng.uniform(0.0, 0.5)
    return np.clip((1 - weight) * base + weight * overlay, 0.0, 1.0)
