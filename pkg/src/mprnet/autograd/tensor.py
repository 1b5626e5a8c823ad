"""Rank-4 tensor, differentiable function base class and the gradient tape."""

import itertools
import logging
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from ..errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64
SCALAR_SHAPE = (1, 1, 1, 1)

_node_ids = itertools.count()
_state = threading.local()

# op name -> multiplier applied to every input gradient of that op (selftest fault hook)
_GRAD_FAULTS: Dict[str, float] = {}


def _tape_stack() -> List["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _counter_stack() -> List["OpCounter"]:
    if not hasattr(_state, "counters"):
        _state.counters = []
    return _state.counters


def current_tape() -> Optional["Tape"]:
    """Return the innermost active tape of this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Tensor:
    """
    Dense (n, c, h, w) array with an optional gradient slot.

    The data array is read-only after construction; only ``grad`` changes.
    Operations record themselves on the active :class:`Tape` when at least
    one input requires a gradient.
    """

    def __init__(
        self,
        data: Union[np.ndarray, float, int, List[Any]],
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
    ):
        arr = np.array(data, dtype=dtype, copy=True)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self._init(arr, requires_grad)

    def _init(self, arr: np.ndarray, requires_grad: bool) -> None:
        if arr.ndim != 4:
            raise DimensionError(f"Tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"Tensor dimensions must be >= 1, got shape {arr.shape}")
        self._data = _readonly(arr)
        self.requires_grad = requires_grad
        self._grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt a freshly computed array without copying it."""
        t = cls.__new__(cls)
        t._init(np.ascontiguousarray(arr), requires_grad)
        return t

    @classmethod
    def zeros(cls, shape: Tuple[int, int, int, int], dtype: Any = DEFAULT_DTYPE) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=dtype))

    @classmethod
    def ones(cls, shape: Tuple[int, int, int, int], dtype: Any = DEFAULT_DTYPE) -> "Tensor":
        return cls._wrap(np.ones(shape, dtype=dtype))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self._data.shape  # type: ignore[return-value]

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def _accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.shape:
            raise DimensionError(f"Gradient shape {grad.shape} does not match tensor shape {self.shape}")
        grad = grad.astype(self.dtype, copy=False)
        self._grad = grad.copy() if self._grad is None else self._grad + grad

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self.shape != SCALAR_SHAPE:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def astype(self, dtype: Any) -> "Tensor":
        return Tensor._wrap(self._data.astype(dtype), False)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data.copy(), False)

    def dump_text(self) -> str:
        """Portable text dump: header ``n c h w`` then whitespace-separated values."""
        header = " ".join(str(d) for d in self.shape)
        values = " ".join(repr(float(v)) for v in self._data.ravel())
        return f"{header}\n{values}\n"

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dump_text(), encoding="utf-8")

    @classmethod
    def load_text(cls, text: str, dtype: Any = DEFAULT_DTYPE) -> "Tensor":
        tokens = text.split()
        if len(tokens) < 4:
            raise DimensionError("Tensor dump is missing its 'n c h w' header")
        shape = tuple(int(t) for t in tokens[:4])
        values = np.array([float(t) for t in tokens[4:]], dtype=dtype)
        if values.size != int(np.prod(shape)):
            raise DimensionError(f"Tensor dump holds {values.size} values, header {shape} needs {int(np.prod(shape))}")
        return cls._wrap(values.reshape(shape))

    def __add__(self, other: "Tensor") -> "Tensor":
        from .functional import add
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from .functional import mul
        return mul(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from .functional import sub
        return sub(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor. Its data may be replaced through :meth:`assign`."""

    def __init__(self, data: Union[np.ndarray, List[Any]], name: str = "", dtype: Optional[Any] = None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    @property
    def size(self) -> int:
        return int(self._data.size)

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values)
        if values.shape != self.shape:
            raise DimensionError(f"Cannot assign shape {values.shape} to parameter '{self.name}' of shape {self.shape}")
        self._data = _readonly(values.astype(self.dtype, copy=True))

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Function:
    """
    Base class of differentiable primitives.

    ``forward`` receives the numpy arrays of the input tensors plus keyword
    attributes and keeps whatever ``backward`` needs on ``self``.
    ``backward`` receives dL/d(output) and returns one array (or None) per input.
    """

    name = "function"

    def forward(self, *arrays: np.ndarray, **attrs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: Tensor, **attrs: Any) -> Tensor:
        func = cls()
        out = func.forward(*(t.data for t in tensors), **attrs)
        for counter in _counter_stack():
            counter.record(cls.name)

        tape = current_tape()
        requires_grad = tape is not None and any(t.requires_grad for t in tensors)
        result = Tensor._wrap(out, requires_grad)
        if requires_grad:
            tape.record(func, tensors, result)  # type: ignore[union-attr]
        return result


@dataclass
class TapeEntry:
    """One recorded primitive application; saved values live on ``function``."""
    op: str
    function: Function
    inputs: Tuple[Tensor, ...]
    output: Tensor

    @property
    def input_ids(self) -> Tuple[int, ...]:
        return tuple(t.node_id for t in self.inputs)

    @property
    def output_id(self) -> int:
        return self.output.node_id


class Tape:
    """
    Ordered record of primitive applications for reverse-mode differentiation.

    Use as a context manager; each thread has its own stack of active tapes,
    so independent tapes may run concurrently on separate threads.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self._produced: Dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, function: Function, inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        self._produced[output.node_id] = len(self.entries)
        self.entries.append(TapeEntry(function.name, function, tuple(inputs), output))

    def is_topological(self) -> bool:
        """True when every input produced on this tape was recorded before its consumer."""
        for position, entry in enumerate(self.entries):
            for node_id in entry.input_ids:
                produced_at = self._produced.get(node_id)
                if produced_at is not None and produced_at >= position:
                    return False
        return True

    def backward(self, root: Tensor) -> None:
        """
        Propagate d(root)/d(leaf) into ``grad`` of every reachable leaf.

        Entries are visited in strict reverse recording order. Leaf gradients
        accumulate, so calling this twice without zeroing doubles them.
        """
        if root.shape != SCALAR_SHAPE:
            raise UsageError(f"backward() needs a scalar root of shape {SCALAR_SHAPE}, got {root.shape}")

        seed = np.ones(SCALAR_SHAPE, dtype=root.dtype)
        if root.node_id not in self._produced:
            if root.requires_grad:
                root._accumulate_grad(seed)
            return

        grads: Dict[int, np.ndarray] = {root.node_id: seed}
        for entry in reversed(self.entries):
            grad = grads.pop(entry.output_id, None)
            if grad is None:
                continue
            input_grads = entry.function.backward(grad)
            fault = _GRAD_FAULTS.get(entry.op)
            for tensor, g in zip(entry.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if fault is not None:
                    g = g * fault
                if tensor.node_id in self._produced:
                    previous = grads.get(tensor.node_id)
                    grads[tensor.node_id] = g if previous is None else previous + g
                else:
                    tensor._accumulate_grad(g)
        logger.debug("Backward replayed %d tape entries", len(self.entries))


class OpCounter:
    """Counts primitive applications, in total and per op name."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: Counter = Counter()

    def record(self, op: str) -> None:
        self.total += 1
        self.by_op[op] += 1


@contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Count every primitive applied on this thread inside the block."""
    counter = OpCounter()
    stack = _counter_stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


@contextmanager
def inject_gradient_fault(op: str, scale: float = 1.1) -> Iterator[None]:
    """Scale every input gradient of ``op`` by ``scale`` while active."""
    previous = _GRAD_FAULTS.get(op)
    _GRAD_FAULTS[op] = scale
    logger.warning("Gradient fault injected into '%s' (scale %s)", op, scale)
    try:
        yield
    finally:
        if previous is None:
            _GRAD_FAULTS.pop(op, None)
        else:
            _GRAD_FAULTS[op] = previous
