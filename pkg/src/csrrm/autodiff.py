"""Dense float64 tensors with tape-based reverse-mode differentiation.

Deliberately small: row-major numpy storage, one tape per forward pass,
and exactly the operations the rest of the package needs. No views, no
broadcasting beyond scalars and the channel-scaling op, no mixed
precision.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "active_tape",
    "add",
    "sub",
    "hadamard",
    "scalar_mul",
    "matmul",
    "conv2d",
    "relu",
    "gelu",
    "sigmoid",
    "log",
    "softmax",
    "global_avg_pool",
    "global_max_pool",
    "dropout",
    "reduce_sum",
    "stack",
    "take_row",
    "concat",
    "pick",
    "scale_channels",
    "cross_entropy",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array paired with an accumulated gradient.

    ``grad`` always has the same shape as ``value`` and is all-zero right
    after construction and after :meth:`zero_grad`.
    """

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of one forward pass; drives the backward sweep.

    Replaying in reverse visits every recorded operation exactly once;
    each backward closure adds its contribution into the input grads, so
    a node feeding several consumers accumulates the sum.
    """

    def __init__(self) -> None:
        self._backward_fns: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._backward_fns)

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._backward_fns.append(backward_fn)

    def backward(self, root: Tensor) -> None:
        if root.value.ndim != 0:
            raise ShapeError(
                f"backward root must be a scalar, got shape {root.shape}"
            )
        root.grad[...] = 1.0
        for fn in reversed(self._backward_fns):
            fn()


def _record(out: Tensor, backward_fn: Callable[[], None]) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)


def _binary_mode(name: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "equal"
    if b.value.ndim == 0:
        return "b_scalar"
    if a.value.ndim == 0:
        return "a_scalar"
    raise ShapeError(f"{name}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_mode("add", a, b)
    out = Tensor(a.value + b.value, a.requires_grad or b.requires_grad)

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad.sum() if mode == "a_scalar" else out.grad
        if b.requires_grad:
            b.grad += out.grad.sum() if mode == "b_scalar" else out.grad

    _record(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_mode("sub", a, b)
    out = Tensor(a.value - b.value, a.requires_grad or b.requires_grad)

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad.sum() if mode == "a_scalar" else out.grad
        if b.requires_grad:
            b.grad -= out.grad.sum() if mode == "b_scalar" else out.grad

    _record(out, backward)
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_mode("hadamard", a, b)
    out = Tensor(a.value * b.value, a.requires_grad or b.requires_grad)

    def backward() -> None:
        if a.requires_grad:
            ga = out.grad * b.value
            a.grad += ga.sum() if mode == "a_scalar" else ga
        if b.requires_grad:
            gb = out.grad * a.value
            b.grad += gb.sum() if mode == "b_scalar" else gb

    _record(out, backward)
    return out


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.value * s, a.requires_grad)

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * s

    _record(out, backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; accepts (m,k)@(k,n) and the matrix-vector case (m,k)@(k,)."""
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise ShapeError(
            f"matmul: expected 2-d @ 1-or-2-d, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}"
        )
    out = Tensor(a.value @ b.value, a.requires_grad or b.requires_grad)

    def backward() -> None:
        if b.value.ndim == 1:
            if a.requires_grad:
                a.grad += np.outer(out.grad, b.value)
            if b.requires_grad:
                b.grad += a.value.T @ out.grad
        else:
            if a.requires_grad:
                a.grad += out.grad @ b.value.T
            if b.requires_grad:
                b.grad += a.value.T @ out.grad

    _record(out, backward)
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    c, h, w = x.shape
    if padding:
        padded = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        padded[:, padding : padding + h, padding : padding + w] = x
    else:
        padded = x
    h_out = (padded.shape[1] - kh) // stride + 1
    w_out = (padded.shape[2] - kw) // stride + 1
    cols = np.empty((c, kh, kw, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[
                :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
            ]
    return cols.reshape(c * kh * kw, h_out * w_out)


def _col2im(
    dcols: np.ndarray,
    x_shape: tuple[int, int, int],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
    h_out: int,
    w_out: int,
) -> np.ndarray:
    c, h, w = x_shape
    dpadded = np.zeros((c, h + 2 * padding, w + 2 * padding))
    d6 = dcols.reshape(c, kh, kw, h_out, w_out)
    for i in range(kh):
        for j in range(kw):
            dpadded[
                :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
            ] += d6[:, i, j]
    if padding:
        return dpadded[:, padding : padding + h, padding : padding + w]
    return dpadded


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-d cross-correlation of a (C_in,H,W) input with a (C_out,C_in,kh,kw) kernel."""
    if x.value.ndim != 3:
        raise ShapeError(f"conv2d: input must be (C,H,W), got {x.shape}")
    if kernel.value.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (C_out,C_in,kh,kw), got {kernel.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but kernel expects {kc}"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"conv2d: non-positive output dims {h_out}x{w_out} for input "
            f"{h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    cols = _im2col(x.value, kh, kw, stride, padding)
    wmat = kernel.value.reshape(c_out, -1)
    out_val = (wmat @ cols).reshape(c_out, h_out, w_out)
    if bias is not None:
        out_val += bias.value[:, None, None]
    needs = x.requires_grad or kernel.requires_grad or (
        bias is not None and bias.requires_grad
    )
    out = Tensor(out_val, needs)

    def backward() -> None:
        g = out.grad.reshape(c_out, -1)
        if kernel.requires_grad:
            kernel.grad += (g @ cols.T).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            bias.grad += out.grad.sum(axis=(1, 2))
        if x.requires_grad:
            dcols = wmat.T @ g
            x.grad += _col2im(dcols, x.shape, kh, kw, stride, padding, h_out, w_out)

    _record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.value, 0.0), x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad * (x.value > 0.0)

    _record(out, backward)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF gelu, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.value * _INV_SQRT2))
    out = Tensor(x.value * cdf, x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.value * x.value) * _INV_SQRT_2PI
            x.grad += out.grad * (cdf + x.value * pdf)

    _record(out, backward)
    return out


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.value)
    out = Tensor(s, x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad * s * (1.0 - s)

    _record(out, backward)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.value), x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad / x.value

    _record(out, backward)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            inner = (out.grad * s).sum(axis=axis, keepdims=True)
            x.grad += s * (out.grad - inner)

    _record(out, backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    if x.value.ndim != 3:
        raise ShapeError(f"global_avg_pool: input must be (C,H,W), got {x.shape}")
    c, h, w = x.shape
    out = Tensor(x.value.mean(axis=(1, 2)), x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad[:, None, None] / (h * w)

    _record(out, backward)
    return out


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max; gradient routes to the first argmax in row-major order."""
    if x.value.ndim != 3:
        raise ShapeError(f"global_max_pool: input must be (C,H,W), got {x.shape}")
    c = x.shape[0]
    flat = x.value.reshape(c, -1)
    idx = flat.argmax(axis=1)
    out = Tensor(flat[np.arange(c), idx], x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad.reshape(c, -1)[np.arange(c), idx] += out.grad

    _record(out, backward)
    return out


def dropout(
    x: Tensor,
    rate: float,
    training: bool,
    rng: np.random.Generator | int | None = None,
) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) at train time, identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an rng seed or Generator")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    scale = 1.0 / (1.0 - rate)
    mask = (gen.random(x.shape) >= rate) * scale
    out = Tensor(x.value * mask, x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad * mask

    _record(out, backward)
    return out


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.value.sum(axis=axis), x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            if axis is None:
                x.grad += out.grad
            else:
                x.grad += np.expand_dims(out.grad, axis)

    _record(out, backward)
    return out


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not tensors:
        raise ShapeError("stack: need at least one tensor")
    shape0 = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape0:
            raise ShapeError(f"stack: shapes {shape0} and {t.shape} differ")
    out = Tensor(
        np.stack([t.value for t in tensors]),
        any(t.requires_grad for t in tensors),
    )

    def backward() -> None:
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += out.grad[i]

    _record(out, backward)
    return out


def take_row(x: Tensor, index: int) -> Tensor:
    if x.value.ndim < 1 or not 0 <= index < x.shape[0]:
        raise ShapeError(f"take_row: index {index} out of range for shape {x.shape}")
    out = Tensor(x.value[index], x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad[index] += out.grad

    _record(out, backward)
    return out


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-d tensors."""
    for t in tensors:
        if t.value.ndim != 1:
            raise ShapeError(f"concat: expects 1-d tensors, got shape {t.shape}")
    out = Tensor(
        np.concatenate([t.value for t in tensors]),
        any(t.requires_grad for t in tensors),
    )
    offsets = np.cumsum([0] + [t.size for t in tensors])

    def backward() -> None:
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += out.grad[offsets[i] : offsets[i + 1]]

    _record(out, backward)
    return out


def pick(x: Tensor, index: int) -> Tensor:
    """Select one element of a 1-d tensor as a scalar."""
    if x.value.ndim != 1:
        raise ShapeError(f"pick: expects a 1-d tensor, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise ShapeError(f"pick: index {index} out of range for shape {x.shape}")
    out = Tensor(x.value[index], x.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad[index] += out.grad

    _record(out, backward)
    return out


def scale_channels(x: Tensor, weights: Tensor) -> Tensor:
    """Multiply a (C,H,W) map by per-channel weights (C,), broadcast over space."""
    if x.value.ndim != 3 or weights.value.ndim != 1:
        raise ShapeError(
            f"scale_channels: expected (C,H,W) and (C,), got {x.shape} and {weights.shape}"
        )
    if x.shape[0] != weights.shape[0]:
        raise ShapeError(
            f"scale_channels: channel counts differ, {x.shape} vs {weights.shape}"
        )
    out = Tensor(x.value * weights.value[:, None, None], x.requires_grad or weights.requires_grad)

    def backward() -> None:
        if x.requires_grad:
            x.grad += out.grad * weights.value[:, None, None]
        if weights.requires_grad:
            weights.grad += (out.grad * x.value).sum(axis=(1, 2))

    _record(out, backward)
    return out


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-probability of ``label`` under softmax(logits)."""
    probs = softmax(logits, axis=-1)
    return scalar_mul(log(pick(probs, int(label))), -1.0)
