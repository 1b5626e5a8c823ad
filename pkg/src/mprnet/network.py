"""
Three-stage progressive restoration network.

Stage 1 runs a shared stem + encoder-decoder over the four quadrants of the
input, stage 2 over its top and bottom halves, stage 3 runs ORSNet over the
full image. Per-scale features of the patches are stitched back to full size
before the SAM bridge and before cross-stage fusion. ``n_stages`` truncates
the pipeline, so a shorter model is a prefix of the three-stage one.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence

from .autograd import functional as F
from .autograd.tensor import Parameter, Tensor
from .errors import DimensionError, UsageError
from .models.config import ModelConfig
from .nn.blocks import CSFF, SAM, EncoderDecoder, ImageHead, ORSNet
from .nn.module import Conv2d, Initializer, Module

logger = logging.getLogger(__name__)

MAX_STAGES = 3


# ------------------------------------------------------------- patch layout


def split_patches(img: Tensor, stage: int) -> List[Tensor]:
    """Stage 1: quadrants TL, TR, BL, BR. Stage 2: top, bottom. Stage 3: the image itself."""
    if stage not in (1, 2, 3):
        raise UsageError(f"split_patches: stage must be 1, 2 or 3, got {stage}")
    if stage == 3:
        return [img]
    n, c, h, w = img.shape
    if h % 2 or w % 2:
        raise DimensionError(f"split_patches: stage {stage} needs even height and width, got {img.shape}")
    top = F.crop(img, 0, 0, h // 2, w)
    bottom = F.crop(img, h // 2, 0, h // 2, w)
    if stage == 2:
        return [top, bottom]
    return [
        F.crop(img, 0, 0, h // 2, w // 2),
        F.crop(img, 0, w // 2, h // 2, w // 2),
        F.crop(img, h // 2, 0, h // 2, w // 2),
        F.crop(img, h // 2, w // 2, h // 2, w // 2),
    ]


def merge_patches(patches: Sequence[Tensor], stage: int) -> Tensor:
    """Inverse of :func:`split_patches`."""
    expected = {1: 4, 2: 2, 3: 1}.get(stage)
    if expected is None:
        raise UsageError(f"merge_patches: stage must be 1, 2 or 3, got {stage}")
    if len(patches) != expected:
        raise DimensionError(f"merge_patches: stage {stage} needs {expected} patches, got {len(patches)}")
    shapes = {p.shape for p in patches}
    if len(shapes) != 1:
        raise DimensionError(f"merge_patches: patch shapes differ: {sorted(shapes)}")
    if stage == 3:
        return patches[0]
    if stage == 2:
        return F.concat_spatial(patches, axis=2)
    top = F.concat_spatial(patches[:2], axis=3)
    bottom = F.concat_spatial(patches[2:], axis=3)
    return F.concat_spatial([top, bottom], axis=2)


# ------------------------------------------------------------------- stages


@dataclass
class StageOutput:
    """Restored image ``x_s = img + r_s`` of one stage and the features it hands on."""
    stage: int
    x_s: Tensor
    r_s: Tensor
    f_out: Optional[Tensor]
    supervised: bool = True


class EncoderDecoderStage(Module):
    """Stem, encoder-decoder and bridge of stages 1 and 2; ``csff`` fuses the previous stage in."""

    def __init__(self, cfg: ModelConfig, init: Initializer, with_csff: bool):
        super().__init__()
        c = cfg.base_width
        if with_csff:
            self.csff = CSFF(cfg.widths, cfg.widths, init)
        else:
            object.__setattr__(self, "csff", None)
        self.stem = Conv2d(3, c, 3, init)
        self.subnet = EncoderDecoder(cfg.widths, cfg.n_cabs_per_scale, cfg.cab_reduction, cfg.activation, init)
        self.bridge = SAM(c, init) if cfg.use_sam else ImageHead(c, init)


class OriginalResolutionStage(Module):
    """Stem, ORSNet and the final 3x3 conv to the residual image."""

    def __init__(self, cfg: ModelConfig, init: Initializer, with_csff: bool):
        super().__init__()
        c = cfg.base_width
        if with_csff:
            fused = min(cfg.n_orbs, cfg.n_scales)
            self.csff = CSFF(cfg.widths[:fused], [c] * fused, init, to_full_resolution=True)
        else:
            object.__setattr__(self, "csff", None)
        self.stem = Conv2d(3, c, 3, init)
        self.subnet = ORSNet(c, cfg.n_orbs, cfg.n_cabs_per_orb, cfg.cab_reduction, cfg.activation, init)
        self.tail = Conv2d(c, 3, 3, init)


@dataclass
class _Carry:
    features: Tensor
    enc_feats: List[Tensor]
    dec_feats: List[Tensor]


class MPRNet(Module):
    """
    Multi-stage progressive restoration model.

    Calling the model returns one :class:`StageOutput` per stage;
    :meth:`iter_stages` yields them lazily so callers can stop early.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        init = Initializer(
            seed=config.init_seed if config.init_seed is not None else 0,
            dtype=config.dtype,
            prelu_init=config.prelu_init,
        )
        # registration order fixes both init RNG consumption and checkpoint layout
        self.stage1 = EncoderDecoderStage(config, init, with_csff=False)
        if config.n_stages >= 2:
            self.stage2 = EncoderDecoderStage(config, init, with_csff=config.use_csff)
        if config.n_stages >= 3:
            self.stage3 = OriginalResolutionStage(config, init, with_csff=config.use_csff)
        logger.debug("Built %d-stage model with %d parameters", config.n_stages, self.param_count())

    @property
    def n_stages(self) -> int:
        return self.config.n_stages

    @property
    def dtype(self):
        return self.config.dtype

    def param_count(self) -> int:
        return param_count(self)

    def check_input(self, img: Tensor) -> None:
        if img.shape[1] != 3:
            raise DimensionError(f"MPRNet: expected an RGB batch (n, 3, h, w), got {img.shape}")
        multiple = self.config.spatial_multiple
        if img.shape[2] % multiple or img.shape[3] % multiple:
            raise DimensionError(f"MPRNet: height and width of {img.shape} must be multiples of {multiple}")

    def forward(self, img: Tensor) -> List[StageOutput]:
        return list(self.iter_stages(img))

    def iter_stages(self, img: Tensor) -> Iterator[StageOutput]:
        """Yield stage outputs in order; stages after the last consumed one never run."""
        self.check_input(img)
        carry = None
        for stage in range(1, self.n_stages + 1):
            last = stage == self.n_stages
            if stage < 3:
                output, carry = self._run_encoder_decoder_stage(stage, img, carry, last)
            else:
                output = self._run_original_resolution_stage(img, carry)
            yield output

    def _run_encoder_decoder_stage(self, stage: int, img: Tensor, carry: Optional[_Carry], last: bool):
        module: EncoderDecoderStage = getattr(self, f"stage{stage}")
        patches = split_patches(img, stage)
        carried = split_patches(carry.features, stage) if carry is not None else None

        injections: Optional[List[List[Tensor]]] = None
        if carry is not None and module.csff is not None:
            fused = module.csff(carry.enc_feats, carry.dec_feats)
            per_scale = [split_patches(t, stage) for t in fused]
            injections = [[per_scale[s][i] for s in range(len(per_scale))] for i in range(len(patches))]

        runs = []
        for i, patch in enumerate(patches):
            h = module.stem(patch)
            if carried is not None:
                h = F.add(h, carried[i])
            runs.append(module.subnet(h, injections[i] if injections is not None else None))

        scales = module.subnet.n_scales
        features = merge_patches([r.features for r in runs], stage)
        enc_feats = [merge_patches([r.enc_feats[s] for r in runs], stage) for s in range(scales)]
        dec_feats = [merge_patches([r.dec_feats[s] for r in runs], stage) for s in range(scales)]

        bridged = module.bridge(features, img)
        output = StageOutput(
            stage=stage,
            x_s=bridged.image,
            r_s=bridged.residual,
            f_out=None if last else bridged.features,
            supervised=bridged.supervised or last,
        )
        return output, _Carry(bridged.features, enc_feats, dec_feats)

    def _run_original_resolution_stage(self, img: Tensor, carry: _Carry) -> StageOutput:
        module: OriginalResolutionStage = self.stage3
        h = F.add(module.stem(img), carry.features)
        injected = module.csff(carry.enc_feats, carry.dec_feats) if module.csff is not None else None
        residual = module.tail(module.subnet(h, injected))
        return StageOutput(stage=3, x_s=F.add(img, residual), r_s=residual, f_out=None, supervised=True)


def early_exit_infer(img: Tensor, model: MPRNet, exit_stage: int) -> Tensor:
    """Return ``x_s`` of ``exit_stage`` without running any later stage."""
    if not 1 <= exit_stage <= model.n_stages:
        raise UsageError(f"exit_stage must be in [1, {model.n_stages}], got {exit_stage}")
    for output in model.iter_stages(img):
        if output.stage == exit_stage:
            return output.x_s
    raise UsageError(f"Stage {exit_stage} was never produced")  # pragma: no cover


def param_count(model: Module) -> int:
    """Total number of scalar parameters of any module."""
    return sum(p.size for p in model.parameters())


def stage_parameter_sample(model: MPRNet) -> Dict[str, Parameter]:
    """
    First parameter of every ``stage<k>.<part>`` group (csff, stem, subnet, bridge, tail).

    Gradient checks on the full model use this so that each stage, and the
    fusion paths between them, contributes coordinates.
    """
    sample: Dict[str, Parameter] = {}
    for name, param in model.named_parameters():
        sample.setdefault(".".join(name.split(".")[:2]), param)
    return sample
