"""Fast invariant suite behind the ``selftest`` command."""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .autograd import functional as F
from .autograd.gradcheck import grad_check
from .autograd.tensor import Parameter, Tensor, inject_gradient_fault
from .checkpoint import decode_checkpoint, encode_checkpoint
from .losses import edge_loss, total_loss
from .metrics import error_reduction_psnr, error_reduction_ssim, psnr
from .models.config import LossConfig, ModelConfig, OptimConfig
from .network import MPRNet, merge_patches, split_patches, stage_parameter_sample
from .nn.blocks import CAB, SAM
from .nn.module import Initializer
from .optim import cosine_lr

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    group: str
    name: str
    passed: bool
    detail: str = ""


def _param(rng: np.random.Generator, shape, scale: float = 1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, shape))


def _gradient_checks() -> List[Tuple[str, Callable[[], float]]]:
    rng = np.random.default_rng(7)
    x = _param(rng, (1, 2, 6, 6))
    w = _param(rng, (3, 2, 3, 3), 0.5)
    b = _param(rng, (1, 3, 1, 1))
    y = Tensor(rng.normal(size=(1, 3, 6, 6)))
    init = Initializer(seed=3, dtype=np.float64)
    cab = CAB(4, 2, "sigmoid", init)
    sam = SAM(4, init)
    feats = _param(rng, (1, 4, 4, 4))
    img = Tensor(rng.uniform(size=(1, 3, 4, 4)))
    tiny = ModelConfig(base_width=2, n_scales=2, n_cabs_per_scale=1, n_orbs=1, n_cabs_per_orb=1,
                       cab_reduction=1, activation="sigmoid", precision="float64", init_seed=5)
    model = MPRNet(tiny)
    noisy = Tensor(rng.uniform(size=(1, 3, 16, 16)))
    clean = Tensor(rng.uniform(size=(1, 3, 16, 16)))
    sampled = list(stage_parameter_sample(model).values())
    loss_cfg = LossConfig()

    return [
        ("conv2d", lambda: grad_check(lambda: F.sum_all(F.mul(F.conv2d(x, w, b, padding=1), y)), [x, w, b])),
        ("max_pool2", lambda: grad_check(lambda: F.sum_all(F.mul(F.max_pool2(x), F.max_pool2(x))), [x])),
        ("upsample", lambda: grad_check(lambda: F.sum_all(F.mul(F.upsample_bilinear2(x), F.upsample_bilinear2(x))), [x])),
        ("charbonnier", lambda: grad_check(lambda: F.charbonnier(F.conv2d(x, w, padding=1), y), [w], step=1e-3)),
        ("edge_loss", lambda: grad_check(lambda: edge_loss(F.conv2d(x, w, padding=1), y), [w], step=1e-3)),
        ("cab", lambda: grad_check(lambda: F.sum_all(F.mul(cab(feats), cab(feats))), [feats] + cab.parameters()[:2])),
        ("sam", lambda: grad_check(lambda: F.sum_all(F.mul(sam(feats, img).features, sam(feats, img).features)),
                                   [feats] + sam.parameters()[:2])),
        ("model", lambda: grad_check(lambda: total_loss(model(noisy), clean, loss_cfg).total_tensor,
                                     sampled, step=1e-6, max_coords=4)),
    ]


def _identity_checks() -> List[Tuple[str, Callable[[], bool]]]:
    rng = np.random.default_rng(11)

    def zero_model() -> bool:
        cfg = ModelConfig(base_width=4, n_scales=2, n_cabs_per_scale=1, n_orbs=1, n_cabs_per_orb=1,
                          cab_reduction=2, precision="float64")
        model = MPRNet(cfg).zero_()
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        outputs = model(img)
        report = total_loss(outputs, img, LossConfig())
        same = all(np.array_equal(o.x_s.data, img.data) for o in outputs)
        return same and math.isclose(report.total, 3.15e-3, rel_tol=1e-12)

    def residual_identity() -> bool:
        cfg = ModelConfig(base_width=4, n_scales=2, n_cabs_per_scale=1, n_orbs=1, n_cabs_per_orb=1,
                          cab_reduction=2, precision="float64", init_seed=2)
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        return all(np.array_equal(F.add(img, o.r_s).data, o.x_s.data) for o in MPRNet(cfg)(img))

    def sam_mask() -> bool:
        sam = SAM(4, Initializer(dtype=np.float64)).zero_()
        feats = Tensor(rng.normal(size=(1, 4, 4, 4)))
        out = sam(feats, Tensor(rng.uniform(size=(1, 3, 4, 4))))
        return np.array_equal(out.features.data, feats.data)

    return [("zero_model", zero_model), ("residual", residual_identity), ("sam_zero", sam_mask)]


def _roundtrip_checks() -> List[Tuple[str, Callable[[], bool]]]:
    rng = np.random.default_rng(13)

    def patches() -> bool:
        img = Tensor(rng.uniform(size=(2, 3, 8, 12)))
        return all(np.array_equal(merge_patches(split_patches(img, s), s).data, img.data) for s in (1, 2, 3))

    def checkpoint() -> bool:
        cfg = ModelConfig(base_width=4, n_scales=2, n_cabs_per_scale=1, n_orbs=1, n_cabs_per_orb=1, cab_reduction=2)
        model = MPRNet(cfg)
        _, state = decode_checkpoint(encode_checkpoint(model))
        return all(np.array_equal(state[name], p.data) for name, p in model.named_parameters())

    def tensor_dump() -> bool:
        t = Tensor(rng.normal(size=(1, 2, 3, 4)))
        return np.array_equal(Tensor.load_text(t.dump_text()).data, t.data)

    return [("patches", patches), ("checkpoint", checkpoint), ("tensor_dump", tensor_dump)]


def _arithmetic_checks() -> List[Tuple[str, Callable[[], bool]]]:
    optim = OptimConfig(total_iters=100)
    return [
        ("rmse_reduction", lambda: round(error_reduction_psnr(30.75, 32.73), 3) == 0.204),
        ("dssim_reduction", lambda: round(error_reduction_ssim(0.903, 0.921), 3) == 0.186),
        ("cosine_endpoints", lambda: cosine_lr(0, optim) == 2e-4 and cosine_lr(100, optim) == 1e-6),
        ("psnr_20db", lambda: psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.1)) == 20.0),
    ]


def run_selftest(fault: Optional[str] = None) -> List[CheckResult]:
    """Run every group; ``fault`` scales the backward rule of that op to prove the checks bite."""
    results: List[CheckResult] = []
    start = time.perf_counter()

    def gradients() -> None:
        for name, check in _gradient_checks():
            error = check()
            results.append(CheckResult("gradients", name, error < GRAD_TOLERANCE, f"max rel error {error:.2e}"))

    if fault is not None:
        with inject_gradient_fault(fault, 1.1):
            gradients()
    else:
        gradients()

    groups: Dict[str, List[Tuple[str, Callable[[], bool]]]] = {
        "identities": _identity_checks(),
        "roundtrips": _roundtrip_checks(),
        "arithmetic": _arithmetic_checks(),
    }
    for group, checks in groups.items():
        for name, check in checks:
            try:
                passed = bool(check())
                detail = ""
            except Exception as e:  # reported, not raised
                passed, detail = False, f"{type(e).__name__}: {e}"
            results.append(CheckResult(group, name, passed, detail))
    logger.info("Selftest finished in %.1f s", time.perf_counter() - start)
    return results
