"""Module tree with named parameters, plus the convolution and activation layers."""

import logging
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import functional as F
from ..autograd.tensor import Parameter, Tensor
from ..errors import UsageError

logger = logging.getLogger(__name__)


class Initializer:
    """Seeded parameter factory: fan-in scaled uniform weights, zero biases."""

    def __init__(self, seed: int = 0, dtype: Any = np.float64, prelu_init: float = 0.25):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.prelu_init = prelu_init

    def conv_weight(self, out_c: int, in_c: int, k: int) -> Parameter:
        bound = 1.0 / np.sqrt(in_c * k * k)
        return Parameter(self.rng.uniform(-bound, bound, (out_c, in_c, k, k)), dtype=self.dtype)

    def zeros(self, shape: Tuple[int, int, int, int]) -> Parameter:
        return Parameter(np.zeros(shape), dtype=self.dtype)

    def slope(self) -> Parameter:
        return Parameter(np.full((1, 1, 1, 1), self.prelu_init), dtype=self.dtype)


class Module:
    """Base class: parameters and child modules are registered by attribute assignment."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """Yield (dotted path, parameter) in registration order; also stamps ``Parameter.name``."""
        for name, param in self._params.items():
            path = f"{prefix}{name}"
            param.name = path
            yield path, param
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise UsageError(f"State mismatch: missing {missing}, unexpected {unexpected}")
        for name, param in own.items():
            param.assign(state[name])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def zero_(self) -> "Module":
        """Set every parameter to zero (the identity configuration of residual blocks)."""
        for p in self.parameters():
            p.assign(np.zeros(p.shape))
        return self


class ModuleList(Module):
    """Ordered container registering children as ``0``, ``1``, ..."""

    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        self._items: List[Module] = []
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]


class Sequential(ModuleList):
    def forward(self, x: Tensor) -> Tensor:
        for module in self:
            x = module(x)
        return x


class Conv2d(Module):
    """Square-kernel convolution, stride 1, 'same' zero padding."""

    def __init__(self, in_c: int, out_c: int, kernel_size: int, init: Initializer, bias: bool = True):
        super().__init__()
        self.in_c, self.out_c, self.kernel_size = in_c, out_c, kernel_size
        self.weight = init.conv_weight(out_c, in_c, kernel_size)
        if bias:
            self.bias = init.zeros((1, out_c, 1, 1))
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=1, padding=self.kernel_size // 2)


class Activation(Module):
    """relu / sigmoid, or prelu with its own learnable slope."""

    def __init__(self, kind: str, init: Initializer):
        super().__init__()
        if kind not in F.ACTIVATIONS:
            raise UsageError(f"Unknown activation '{kind}', expected one of {F.ACTIVATIONS}")
        self.kind = kind
        if kind == "prelu":
            self.slope = init.slope()
        else:
            object.__setattr__(self, "slope", None)

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(x, self.kind, self.slope)
