"""Synthetic degradations standing in for denoising, deblurring and deraining corpora."""

import logging
import math

import numpy as np
from scipy import ndimage
from skimage.draw import line_aa

from ..errors import UsageError
from ..models.config import DegradeSpec

logger = logging.getLogger(__name__)


def _check_image(clean: np.ndarray) -> None:
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise UsageError(f"degrade: expected a (3, h, w) image, got shape {clean.shape}")


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized anti-aliased line of ``length`` pixels through the kernel centre."""
    if length % 2 == 0 or length < 1:
        raise UsageError(f"motion_kernel: length must be odd and positive, got {length}")
    kernel = np.zeros((length, length))
    c = length // 2
    theta = math.radians(angle)
    dr, dc = -math.sin(theta) * c, math.cos(theta) * c
    rr, cc, val = line_aa(
        int(round(c - dr)), int(round(c - dc)), int(round(c + dr)), int(round(c + dc))
    )
    inside = (rr >= 0) & (rr < length) & (cc >= 0) & (cc < length)
    np.maximum.at(kernel, (rr[inside], cc[inside]), val[inside])
    kernel[c, c] = max(kernel[c, c], 1.0)
    return kernel / kernel.sum()


def gaussian_noise(clean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return clean.copy()
    return np.clip(clean + rng.normal(0.0, sigma, clean.shape), 0.0, 1.0)


def box_blur(clean: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(clean, size=(1, size, size), mode="reflect")


def motion_blur(clean: np.ndarray, length: int, angle: float) -> np.ndarray:
    kernel = motion_kernel(length, angle)
    return np.stack([ndimage.convolve(channel, kernel, mode="reflect") for channel in clean])


def rain_streaks(
    clean: np.ndarray, count: int, length: int, angle: float, intensity: float, rng: np.random.Generator
) -> np.ndarray:
    """Alpha-composite ``count`` bright anti-aliased streaks over the image."""
    _, h, w = clean.shape
    alpha = np.zeros((h, w))
    theta = math.radians(angle)
    for _ in range(count):
        r0, c0 = rng.integers(0, h), rng.integers(0, w)
        streak = length * rng.uniform(0.5, 1.0)
        r1 = int(round(r0 + streak * math.sin(theta)))
        c1 = int(round(c0 + streak * math.cos(theta)))
        rr, cc, val = line_aa(int(r0), int(c0), r1, c1)
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        np.maximum.at(alpha, (rr[inside], cc[inside]), val[inside] * intensity)
    return clean * (1.0 - alpha) + alpha


def degrade(clean: np.ndarray, spec: DegradeSpec) -> np.ndarray:
    """Apply ``spec`` to a unit-range (3, h, w) image; the result depends only on ``spec``."""
    _check_image(clean)
    rng = np.random.default_rng(spec.degrade_seed)
    kind = spec.degradation
    if kind == "gaussian_noise":
        return gaussian_noise(clean, spec.noise_sigma, rng)
    if kind == "box_blur":
        return box_blur(clean, spec.blur_size)
    if kind == "motion_blur":
        return motion_blur(clean, spec.motion_length, spec.motion_angle)
    if kind == "rain_streaks":
        return rain_streaks(clean, spec.rain_count, spec.rain_length, spec.rain_angle, spec.rain_intensity, rng)
    raise UsageError(f"degrade: unknown degradation '{kind}'")
