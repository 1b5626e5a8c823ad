"""Image quality metrics and error-reduction conversions."""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from skimage.metrics import structural_similarity

from .autograd.tensor import Tensor
from .errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

ImageLike = Union[Tensor, np.ndarray]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# 11x11 window: skimage truncates the Gaussian at 3.5 sigma
SSIM_MIN_SIZE = 11


def _as_array(img: ImageLike) -> np.ndarray:
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    return data.astype(np.float64, copy=False)


def psnr(x: ImageLike, y: ImageLike, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; ``inf`` when the images are identical."""
    a, b = _as_array(x), _as_array(y)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise UsageError(f"psnr: peak must be positive, got {peak}")
    sq = np.square(a - b).ravel()
    # shifted mean: exact for constant errors
    mse = float(sq[0] + np.mean(sq - sq[0]))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def rgb_to_y(img: ImageLike) -> np.ndarray:
    """BT.601 luma of (n, 3, h, w) or (3, h, w) unit-range RGB; keeps a channel axis of 1."""
    data = _as_array(img)
    if data.ndim not in (3, 4) or data.shape[-3] != 3:
        raise UsageError(f"rgb_to_y: expected 3 colour channels, got shape {data.shape}")
    r, g, b = (data[..., c:c + 1, :, :] for c in range(3))
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def _planes(data: np.ndarray, where: str) -> np.ndarray:
    """Normalize single-channel input to a stack of (h, w) planes."""
    if data.ndim == 2:
        return data[None]
    if data.ndim == 3 and data.shape[0] == 1:
        return data
    if data.ndim == 4 and data.shape[1] == 1:
        return data[:, 0]
    raise UsageError(f"{where}: expects single-channel images, got shape {data.shape} (convert with rgb_to_y)")


def ssim(x: ImageLike, y: ImageLike) -> float:
    """Mean Gaussian-windowed SSIM of unit-range grayscale images, averaged over the batch."""
    a, b = _planes(_as_array(x), "ssim"), _planes(_as_array(y), "ssim")
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[1:]) < SSIM_MIN_SIZE:
        raise DimensionError(f"ssim: images must be at least {SSIM_MIN_SIZE}x{SSIM_MIN_SIZE}, got {a.shape[1:]}")
    values = [
        structural_similarity(
            pa, pb,
            data_range=1.0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
        for pa, pb in zip(a, b)
    ]
    return float(np.mean(values))


def ssim_rgb(x: ImageLike, y: ImageLike) -> float:
    """SSIM averaged over colour channels of (n, 3, h, w) images."""
    a, b = _as_array(x), _as_array(y)
    if a.ndim == 3:
        a, b = a[None], b[None]
    return float(np.mean([ssim(a[:, c:c + 1], b[:, c:c + 1]) for c in range(a.shape[1])]))


def error_reduction_psnr(psnr_method: float, psnr_best: float) -> float:
    """Relative RMSE reduction achieved by ``psnr_best`` over ``psnr_method``."""
    return 1.0 - 10.0 ** (-(psnr_best - psnr_method) / 20.0)


def error_reduction_ssim(ssim_method: float, ssim_best: float) -> float:
    """Relative DSSIM reduction achieved by ``ssim_best`` over ``ssim_method``."""
    if ssim_method == 1.0:
        raise UsageError("error_reduction_ssim: undefined when the compared SSIM is exactly 1")
    return 1.0 - (1.0 - ssim_best) / (1.0 - ssim_method)


EvaluatedOn = Literal["rgb", "y-channel"]


@dataclass
class MetricReport:
    """Mean metrics of one stage (stage 0 is the degraded input)."""
    stage: int
    psnr: float
    ssim: float
    evaluated_on: EvaluatedOn = "rgb"
    images: int = 0

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        values: Dict[str, str] = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
        return cls(
            stage=int(values["stage"]),
            psnr=float(values["psnr"]),
            ssim=float(values["ssim"]),
            evaluated_on=values.get("evaluated_on", "rgb"),  # type: ignore[arg-type]
            images=int(values.get("images", 0)),
        )


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def best_report(reports: List[MetricReport]) -> Optional[MetricReport]:
    """Report with the highest PSNR (ties go to the later stage)."""
    best = None
    for report in reports:
        if best is None or report.psnr >= best.psnr:
            best = report
    return best
