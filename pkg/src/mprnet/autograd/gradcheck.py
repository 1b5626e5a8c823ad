"""Central finite-difference check of tape gradients."""

import logging
from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError
from .tensor import Parameter, Tape, Tensor

logger = logging.getLogger(__name__)

REL_FLOOR = 1e-8


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
    max_coords: int = 24,
    seed: int = 0,
) -> float:
    """
    Compare analytic gradients of a scalar graph against central differences.

    Args:
        f: Zero-argument callable building the scalar graph from ``params``.
        params: Parameters to check; all must be float64.
        step: Finite-difference step.
        max_coords: Coordinates sampled per parameter (all if fewer).
        seed: Seed for the coordinate sampler.

    Returns:
        max |analytic - cd| / max(|analytic|, |cd|, 1e-8) over the sampled coordinates.
    """
    for p in params:
        if p.dtype != np.float64:
            raise UsageError(f"grad_check needs float64 parameters, '{p.name}' is {p.dtype}")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        root = f()
    tape.backward(root)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.ravel()
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        original = p.data.copy()
        for index in coords:
            probe = original.copy().ravel()
            probe[index] += step
            p.assign(probe.reshape(p.shape))
            upper = f().item()
            probe[index] -= 2 * step
            p.assign(probe.reshape(p.shape))
            lower = f().item()
            p.assign(original)

            numeric = (upper - lower) / (2 * step)
            exact = float(grad.ravel()[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), REL_FLOOR)
            if error > worst:
                worst = error
                logger.debug("grad_check %s[%d]: analytic=%g numeric=%g rel=%g", p.name, index, exact, numeric, error)
    return worst
