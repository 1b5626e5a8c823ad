"""
Building blocks of the multi-stage restoration network.

CAB          channel attention block (residual, squeeze-and-excite style)
ORB          original-resolution block: CAB stack + 3x3 conv, residual
EncoderDecoder  multi-scale U-Net of CAB stacks
ORSNet       chain of ORBs at full resolution
SAM          supervised attention module between stages
ImageHead    plain 1x1 image head used when attention is switched off
CSFF         cross-stage feature fusion projections
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

from ..autograd import functional as F
from ..autograd.tensor import Tensor
from ..errors import DimensionError, UsageError
from .module import Activation, Conv2d, Initializer, Module, ModuleList, Sequential

logger = logging.getLogger(__name__)


def _expect_channels(x: Tensor, channels: int, where: str) -> None:
    if x.shape[1] != channels:
        raise DimensionError(f"{where}: expected {channels} channels, got input of shape {x.shape}")


class CAB(Module):
    """x + f * w with f = conv(act(conv(x))) and w = sigmoid(up(act(down(gap(f)))))."""

    def __init__(self, width: int, reduction: int, activation: str, init: Initializer):
        super().__init__()
        if width % reduction:
            raise UsageError(f"CAB: reduction {reduction} does not divide width {width}")
        self.width = width
        self.conv1 = Conv2d(width, width, 3, init)
        self.act = Activation(activation, init)
        self.conv2 = Conv2d(width, width, 3, init)
        self.attn_down = Conv2d(width, width // reduction, 1, init)
        self.attn_act = Activation(activation, init)
        self.attn_up = Conv2d(width // reduction, width, 1, init)

    def forward(self, x: Tensor) -> Tensor:
        _expect_channels(x, self.width, "CAB")
        f = self.conv2(self.act(self.conv1(x)))
        w = F.sigmoid(self.attn_up(self.attn_act(self.attn_down(F.global_avg_pool(f)))))
        return F.add(x, F.scale_channels(f, w))


def cab_stack(width: int, count: int, reduction: int, activation: str, init: Initializer) -> Sequential:
    return Sequential([CAB(width, reduction, activation, init) for _ in range(count)])


class ORB(Module):
    def __init__(self, width: int, n_cabs: int, reduction: int, activation: str, init: Initializer):
        super().__init__()
        self.width = width
        self.cabs = cab_stack(width, n_cabs, reduction, activation, init)
        self.tail = Conv2d(width, width, 3, init)

    def forward(self, x: Tensor) -> Tensor:
        _expect_channels(x, self.width, "ORB")
        return F.add(x, self.tail(self.cabs(x)))


@dataclass
class EncoderDecoderOutput:
    """Decoder output at full resolution plus per-scale features (index 0 = finest)."""
    features: Tensor
    enc_feats: List[Tensor]
    dec_feats: List[Tensor]


class EncoderDecoder(Module):
    """
    U-Net of CAB stacks over ``len(widths)`` scales.

    Downsampling is 2x2 max pooling followed by a 1x1 conv to the next width;
    upsampling is bilinear x2 followed by a 1x1 conv back to the finer width.
    Skip connections pass the encoder feature through one CAB and are added
    to the upsampled decoder feature before that scale's decoder CABs.
    """

    def __init__(self, widths: Sequence[int], n_cabs: int, reduction: int, activation: str, init: Initializer):
        super().__init__()
        self.widths = list(widths)
        scales = len(self.widths)
        self.encoders = ModuleList([cab_stack(w, n_cabs, reduction, activation, init) for w in self.widths])
        self.downs = ModuleList([Conv2d(self.widths[s], self.widths[s + 1], 1, init) for s in range(scales - 1)])
        self.decoders = ModuleList([cab_stack(w, n_cabs, reduction, activation, init) for w in self.widths])
        self.skips = ModuleList([CAB(self.widths[s], reduction, activation, init) for s in range(scales - 1)])
        self.ups = ModuleList([Conv2d(self.widths[s + 1], self.widths[s], 1, init) for s in range(scales - 1)])

    @property
    def n_scales(self) -> int:
        return len(self.widths)

    def forward(self, x: Tensor, injections: Optional[Sequence[Tensor]] = None) -> EncoderDecoderOutput:
        """
        Args:
            x: (n, widths[0], h, w) with h and w divisible by 2**(n_scales - 1).
            injections: Optional per-scale features added after each encoder scale.
        """
        _expect_channels(x, self.widths[0], "EncoderDecoder")
        factor = 2 ** (self.n_scales - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise DimensionError(f"EncoderDecoder: spatial dims of {x.shape} must be divisible by {factor}")
        if injections is not None and len(injections) != self.n_scales:
            raise UsageError(f"EncoderDecoder: expected {self.n_scales} injections, got {len(injections)}")

        enc_feats: List[Tensor] = []
        h = x
        for s, encoder in enumerate(self.encoders):
            if s > 0:
                h = self.downs[s - 1](F.max_pool2(h))
            h = encoder(h)
            if injections is not None:
                if injections[s].shape != h.shape:
                    raise DimensionError(
                        f"EncoderDecoder: injection {injections[s].shape} at scale {s} does not match {h.shape}"
                    )
                h = F.add(h, injections[s])
            enc_feats.append(h)

        dec_feats: List[Tensor] = [None] * self.n_scales  # type: ignore[list-item]
        d = self.decoders[-1](enc_feats[-1])
        dec_feats[-1] = d
        for s in range(self.n_scales - 2, -1, -1):
            up = self.ups[s](F.upsample_bilinear2(d))
            d = self.decoders[s](F.add(up, self.skips[s](enc_feats[s])))
            dec_feats[s] = d
        return EncoderDecoderOutput(d, enc_feats, dec_feats)


class ORSNet(Module):
    """Full-resolution subnetwork; optional injections are added after the matching ORB."""

    def __init__(self, width: int, n_orbs: int, n_cabs: int, reduction: int, activation: str, init: Initializer):
        super().__init__()
        self.width = width
        self.orbs = ModuleList([ORB(width, n_cabs, reduction, activation, init) for _ in range(n_orbs)])

    def forward(self, x: Tensor, injected: Optional[Sequence[Tensor]] = None) -> Tensor:
        _expect_channels(x, self.width, "ORSNet")
        injected = list(injected or [])
        if len(injected) > len(self.orbs):
            raise UsageError(f"ORSNet: {len(injected)} injections for {len(self.orbs)} ORBs")
        for k, orb in enumerate(self.orbs):
            x = orb(x)
            if k < len(injected):
                if injected[k].shape != x.shape:
                    raise DimensionError(f"ORSNet: injection {injected[k].shape} after ORB {k} does not match {x.shape}")
                x = F.add(x, injected[k])
        return x


@dataclass
class BridgeOutput:
    """Stage image estimate and the features handed on to the next stage."""
    features: Tensor
    image: Tensor
    residual: Tensor
    supervised: bool = True
    mask: Optional[Tensor] = None


class SAM(Module):
    """Supervised attention: residual image, attention mask from it, gated features."""

    def __init__(self, width: int, init: Initializer):
        super().__init__()
        self.width = width
        self.conv_res = Conv2d(width, 3, 1, init)
        self.conv_feat = Conv2d(width, width, 1, init)
        self.conv_mask = Conv2d(3, width, 1, init)

    def forward(self, features: Tensor, image: Tensor) -> BridgeOutput:
        _expect_channels(features, self.width, "SAM")
        _expect_channels(image, 3, "SAM image")
        if features.shape[2:] != image.shape[2:] or features.shape[0] != image.shape[0]:
            raise DimensionError(f"SAM: features {features.shape} and image {image.shape} disagree")
        residual = self.conv_res(features)
        restored = F.add(image, residual)
        mask = F.sigmoid(self.conv_mask(restored))
        gated = F.add(features, F.mul(mask, self.conv_feat(features)))
        return BridgeOutput(gated, restored, residual, mask=mask)


class ImageHead(Module):
    """Attention-free bridge: 1x1 conv to a residual image, features pass through unchanged."""

    def __init__(self, width: int, init: Initializer):
        super().__init__()
        self.width = width
        self.conv_res = Conv2d(width, 3, 1, init)

    def forward(self, features: Tensor, image: Tensor) -> BridgeOutput:
        _expect_channels(features, self.width, "ImageHead")
        residual = self.conv_res(features)
        return BridgeOutput(features, F.add(image, residual), residual, supervised=False)


class CSFF(Module):
    """
    Cross-stage feature fusion: per scale, 1x1 convs of the encoder and decoder
    features of one stage, summed. With ``to_full_resolution`` the sum at scale s
    is upsampled s times so that it can be added inside ORSNet.
    """

    def __init__(self, in_widths: Sequence[int], out_widths: Sequence[int], init: Initializer,
                 to_full_resolution: bool = False):
        super().__init__()
        if len(in_widths) != len(out_widths):
            raise UsageError("CSFF: in_widths and out_widths must have the same length")
        self.in_widths = list(in_widths)
        self.to_full_resolution = to_full_resolution
        self.enc = ModuleList([Conv2d(i, o, 1, init) for i, o in zip(in_widths, out_widths)])
        self.dec = ModuleList([Conv2d(i, o, 1, init) for i, o in zip(in_widths, out_widths)])

    @property
    def n_scales(self) -> int:
        return len(self.in_widths)

    def project(self, enc_feat: Tensor, dec_feat: Tensor, scale: int) -> Tensor:
        if not 0 <= scale < self.n_scales:
            raise UsageError(f"CSFF: scale {scale} out of range [0, {self.n_scales})")
        if enc_feat.shape != dec_feat.shape:
            raise DimensionError(f"CSFF: encoder {enc_feat.shape} and decoder {dec_feat.shape} features disagree")
        out = F.add(self.enc[scale](enc_feat), self.dec[scale](dec_feat))
        if self.to_full_resolution:
            for _ in range(scale):
                out = F.upsample_bilinear2(out)
        return out

    def forward(self, enc_feats: Sequence[Tensor], dec_feats: Sequence[Tensor], limit: Optional[int] = None) -> List[Tensor]:
        count = self.n_scales if limit is None else min(limit, self.n_scales)
        return [self.project(enc_feats[s], dec_feats[s], s) for s in range(count)]
