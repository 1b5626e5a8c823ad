"""Rank-4 tensors with a reverse-mode gradient tape."""

from .gradcheck import grad_check
from .tensor import (
    Function,
    OpCounter,
    Parameter,
    Tape,
    TapeEntry,
    Tensor,
    count_ops,
    current_tape,
    inject_gradient_fault,
)

__all__ = [
    "Function",
    "OpCounter",
    "Parameter",
    "Tape",
    "TapeEntry",
    "Tensor",
    "count_ops",
    "current_tape",
    "grad_check",
    "inject_gradient_fault",
]
