"""Training objective: Charbonnier plus weighted edge loss, summed over supervised stages."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

from .autograd import functional as F
from .autograd.functional import charbonnier, laplacian
from .autograd.tensor import Tensor
from .errors import DimensionError, UsageError
from .models.config import LossConfig
from .network import StageOutput

logger = logging.getLogger(__name__)

__all__ = ["LossReport", "charbonnier", "edge_loss", "laplacian", "total_loss"]


def edge_loss(x: Tensor, y: Tensor, epsilon: float = 1e-3) -> Tensor:
    """Charbonnier distance between the Laplacians of ``x`` and ``y``."""
    if x.shape != y.shape:
        raise DimensionError(f"edge_loss: shape mismatch {x.shape} vs {y.shape}")
    return charbonnier(laplacian(x), laplacian(y), epsilon)


@dataclass
class LossReport:
    """Per-stage loss terms (in stage order) and the differentiable total."""
    stages: List[int]
    char: List[float]
    edge: List[float]
    total: float
    total_tensor: Tensor = field(repr=False)

    def terms(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for stage, c, e in zip(self.stages, self.char, self.edge):
            out[f"char{stage}"] = c
            out[f"edge{stage}"] = e
        out["total"] = self.total
        return out

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.terms().values())


def total_loss(outputs: Sequence[StageOutput], target: Tensor, cfg: LossConfig) -> LossReport:
    """Sum of charbonnier(x_s, y) + lambda * edge_loss(x_s, y) over ``outputs``."""
    if not outputs:
        raise UsageError("total_loss: no stage outputs to supervise")
    total = None
    char_values: List[float] = []
    edge_values: List[float] = []
    for output in outputs:
        if output.x_s.shape != target.shape:
            raise DimensionError(f"total_loss: stage {output.stage} output {output.x_s.shape} vs target {target.shape}")
        char = charbonnier(output.x_s, target, cfg.epsilon)
        edge = edge_loss(output.x_s, target, cfg.epsilon)
        term = F.add(char, F.mul_scalar(edge, cfg.lambda_edge))
        total = term if total is None else F.add(total, term)
        char_values.append(char.item())
        edge_values.append(edge.item())
    return LossReport(
        stages=[o.stage for o in outputs],
        char=char_values,
        edge=edge_values,
        total=total.item(),  # type: ignore[union-attr]
        total_tensor=total,  # type: ignore[arg-type]
    )
