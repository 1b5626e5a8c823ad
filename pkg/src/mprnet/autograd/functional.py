"""
Differentiable primitives used by the restoration network.

Every public function validates shapes, then dispatches to a
:class:`~mprnet.autograd.tensor.Function` subclass. All tensors are
(n, c, h, w); scalars are (1, 1, 1, 1).
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import DimensionError, UsageError
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "prelu", "sigmoid")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- convolution


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x: np.ndarray, w: np.ndarray, *bias: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        self.stride, self.padding = stride, padding
        self.x_shape = x.shape
        self.has_bias = bool(bias)
        kh, kw = w.shape[2:]
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        out_h = (xp.shape[2] - kh) // stride + 1
        out_w = (xp.shape[3] - kw) // stride + 1
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
        self.xp_shape, self.windows, self.w = xp.shape, windows, w
        out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
        if bias:
            out = out + bias[0]
        return out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        w, s, p = self.w, self.stride, self.padding
        kh, kw = w.shape[2:]
        out_h, out_w = grad.shape[2:]

        grad_w = np.einsum("nohw,nchwij->ocij", grad, self.windows, optimize=True)
        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += np.einsum(
                    "nohw,oc->nchw", grad, w[:, :, i, j], optimize=True
                )
        h, wd = self.x_shape[2:]
        grad_x = grad_xp[:, :, p:p + h, p:p + wd]
        if self.has_bias:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3), keepdims=True).reshape(1, -1, 1, 1)
        return grad_x, grad_w


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; bias has shape (1, out_c, 1, 1)."""
    out_c, in_c, kh, kw = weight.shape
    if x.shape[1] != in_c:
        raise DimensionError(f"conv2d: input {x.shape} has {x.shape[1]} channels, weight {weight.shape} expects {in_c}")
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d: stride must be >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    for size, k in ((x.shape[2], kh), (x.shape[3], kw)):
        span = size + 2 * padding - k
        if span < 0 or span % stride:
            raise DimensionError(
                f"conv2d: input {x.shape} with weight {weight.shape}, stride {stride}, padding {padding} "
                f"does not give an integral output size"
            )
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding)
    if bias.shape != (1, out_c, 1, 1):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


# -------------------------------------------------------- resampling & pooling


class MaxPool2(Function):
    name = "max_pool2"

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        # argmax returns the first maximum, i.e. row-major order inside the window
        self.argmax = windows.argmax(axis=-1)
        self.x_shape = x.shape
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        n, c, h, w = self.x_shape
        routed = (np.arange(4) == self.argmax[..., None]) * grad[..., None]
        return (routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"max_pool2: spatial dims of {x.shape} must be even")
    return MaxPool2.apply(x)


def bilinear_matrix(size: int, dtype: np.dtype = np.float64) -> np.ndarray:
    """(2*size, size) interpolation matrix, half-pixel centres, edges clamped."""
    rows = np.arange(2 * size)
    src = np.clip((rows + 0.5) / 2.0 - 0.5, 0.0, None)
    lo = np.minimum(np.floor(src).astype(int), size - 1)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    matrix = np.zeros((2 * size, size))
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    return matrix.astype(dtype)


class UpsampleBilinear2(Function):
    name = "upsample_bilinear2"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.rows = bilinear_matrix(x.shape[2], x.dtype)
        self.cols = bilinear_matrix(x.shape[3], x.dtype)
        return self.rows @ x @ self.cols.T

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (self.rows.T @ grad @ self.cols,)


def upsample_bilinear2(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling without corner alignment."""
    return UpsampleBilinear2.apply(x)


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        h, w = self.x_shape[2:]
        return (np.broadcast_to(grad / (h * w), self.x_shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


# ----------------------------------------------------------------- activations


class ReLU(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.where(self.mask, grad, 0).astype(grad.dtype),)


class PReLU(Function):
    name = "prelu"

    def forward(self, x: np.ndarray, slope: np.ndarray) -> np.ndarray:
        self.x, self.slope = x, slope
        self.mask = x > 0
        return np.where(self.mask, x, slope * x)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_x = np.where(self.mask, grad, self.slope * grad)
        grad_slope = np.where(self.mask, 0, self.x * grad).sum().reshape(1, 1, 1, 1).astype(grad.dtype)
        return grad_x, grad_slope


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = expit(x)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.out * (1.0 - self.out),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    if slope.shape != (1, 1, 1, 1):
        raise DimensionError(f"prelu: slope must be a scalar tensor, got {slope.shape}")
    return PReLU.apply(x, slope)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def activation(x: Tensor, kind: str, slope: Optional[Tensor] = None) -> Tensor:
    """Apply ``relu``, ``prelu`` (needs ``slope``) or ``sigmoid`` elementwise."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "prelu":
        if slope is None:
            raise UsageError("prelu activation needs a learnable slope")
        return prelu(x, slope)
    raise UsageError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


# ------------------------------------------------------------------ arithmetic


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


class ScaleChannels(Function):
    name = "scale_channels"

    def forward(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        self.x, self.weights = x, weights
        return x * weights

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad * self.weights, (grad * self.x).sum(axis=(2, 3), keepdims=True)


class MulScalar(Function):
    name = "mul_scalar"

    def forward(self, x: np.ndarray, factor: float = 1.0) -> np.ndarray:
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * grad.dtype.type(self.factor),)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Mul.apply(a, b)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise UsageError(f"Unknown elementwise kind '{kind}', expected 'add' or 'mul'")


def scale_channels(x: Tensor, weights: Tensor) -> Tensor:
    """Multiply (n, c, h, w) features by (n, c, 1, 1) per-channel weights."""
    if weights.shape != (x.shape[0], x.shape[1], 1, 1):
        raise DimensionError(f"scale_channels: weights {weights.shape} do not fit features {x.shape}")
    return ScaleChannels.apply(x, weights)


def mul_scalar(x: Tensor, factor: float) -> Tensor:
    return MulScalar.apply(x, factor=float(factor))


# ----------------------------------------------------------- layout / reshaping


class ConcatChannels(Function):
    name = "concat_channels"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return grad[:, :self.split], grad[:, self.split:]


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat_channels: n, h, w must match, got {a.shape} and {b.shape}")
    return ConcatChannels.apply(a, b)


class Crop(Function):
    name = "crop"

    def forward(self, x: np.ndarray, top: int = 0, left: int = 0, height: int = 1, width: int = 1) -> np.ndarray:
        self.x_shape, self.window = x.shape, (top, left, height, width)
        return x[:, :, top:top + height, left:left + width]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        top, left, height, width = self.window
        full = np.zeros(self.x_shape, dtype=grad.dtype)
        full[:, :, top:top + height, left:left + width] = grad
        return (full,)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial window ``[top:top+height, left:left+width]``."""
    if top < 0 or left < 0 or height < 1 or width < 1 or top + height > x.shape[2] or left + width > x.shape[3]:
        raise DimensionError(f"crop: window (top={top}, left={left}, {height}x{width}) outside tensor {x.shape}")
    return Crop.apply(x, top=top, left=left, height=height, width=width)


class ConcatSpatial(Function):
    name = "concat_spatial"

    def forward(self, *parts: np.ndarray, axis: int = 2) -> np.ndarray:
        self.axis = axis
        self.bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
        return np.concatenate(parts, axis=axis)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def concat_spatial(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along height (axis=2) or width (axis=3)."""
    if axis not in (2, 3):
        raise UsageError(f"concat_spatial: axis must be 2 or 3, got {axis}")
    if not parts:
        raise UsageError("concat_spatial: nothing to concatenate")
    other = 3 if axis == 2 else 2
    reference = parts[0].shape
    for part in parts[1:]:
        if part.shape[:2] != reference[:2] or part.shape[other] != reference[other]:
            raise DimensionError(f"concat_spatial: incompatible shapes {reference} and {part.shape}")
    if len(parts) == 1:
        return parts[0]
    return ConcatSpatial.apply(*parts, axis=axis)


# ------------------------------------------------------------------ reductions


class SumAll(Function):
    name = "sum"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x_shape = x.shape
        return x.sum().reshape(1, 1, 1, 1)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(grad.reshape(()), self.x_shape).copy(),)


class MeanAll(Function):
    name = "mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x_shape = x.shape
        return x.mean().reshape(1, 1, 1, 1)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        size = int(np.prod(self.x_shape))
        return (np.broadcast_to(grad.reshape(()) / size, self.x_shape).copy(),)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def mean_all(x: Tensor) -> Tensor:
    return MeanAll.apply(x)


# ----------------------------------------------------------- loss primitives


class Charbonnier(Function):
    name = "charbonnier"

    def forward(self, x: np.ndarray, y: np.ndarray, epsilon: float = 1e-3) -> np.ndarray:
        eps = x.dtype.type(epsilon)
        diff = x - y
        root = np.sqrt(diff * diff + eps * eps)
        self.diff, self.root = diff, root
        # sqrt(d^2 + e^2) - e rewritten as d^2 / (sqrt(d^2 + e^2) + e): exact zero where x == y
        excess = diff * diff / (root + eps)
        return (eps + excess.mean()).reshape(1, 1, 1, 1).astype(x.dtype)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_x = grad.reshape(()) * self.diff / self.root / self.diff.size
        return grad_x, -grad_x


def charbonnier(x: Tensor, y: Tensor, epsilon: float = 1e-3) -> Tensor:
    """Mean over all elements of sqrt((x - y)^2 + epsilon^2)."""
    _same_shape(x, y, "charbonnier")
    if epsilon <= 0:
        raise UsageError(f"charbonnier: epsilon must be positive, got {epsilon}")
    return Charbonnier.apply(x, y, epsilon=float(epsilon))


def _laplacian(x: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return (
        padded[:, :, :-2, 1:-1] + padded[:, :, 2:, 1:-1]
        + padded[:, :, 1:-1, :-2] + padded[:, :, 1:-1, 2:]
        - 4 * x
    )


class Laplacian(Function):
    name = "laplacian"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return _laplacian(x)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        # the zero-padded 4-neighbour stencil is symmetric, hence self-adjoint
        return (_laplacian(grad),)


def laplacian(x: Tensor) -> Tensor:
    """Per-channel [[0,1,0],[1,-4,1],[0,1,0]] stencil with zero padding."""
    return Laplacian.apply(x)


def stack_batch(parts: List[Tensor]) -> Tensor:
    """Concatenate non-differentiable tensors along the batch axis."""
    return Tensor._wrap(np.concatenate([p.data for p in parts], axis=0))
