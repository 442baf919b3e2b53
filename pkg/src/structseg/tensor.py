"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a gradient-tracking tensor is recorded on a
global tape in execution order; ``backward`` replays the tape in exact
reverse order, accumulating dLoss/dTensor into ``.grad`` buffers. The
engine is deliberately small: just enough ops to train a fully
convolutional segmentation net and differentiate the loss stack.

All data is 64-bit; shapes are static; execution is single-threaded and
bit-deterministic for fixed inputs.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np


class NonFiniteError(RuntimeError):
    """Raised when a NaN/Inf is detected where finite values are required."""


class TapeNode:
    __slots__ = ("op", "out", "backward")

    def __init__(self, op: str, out: "Tensor", backward):
        self.op = op
        self.out = out
        self.backward = backward


class ComputationTape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so inputs always precede the ops
    that consume them; the backward pass walks the list strictly in
    reverse.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = ComputationTape()
_GRAD_ENABLED = True

# Test hook: name an op here to corrupt its backward rule (scales the
# incoming gradient), used as a negative control for gradient checking.
_CORRUPT_OP: Optional[str] = None


def tape() -> ComputationTape:
    return _TAPE


def set_corrupt_backward(op_name: Optional[str]) -> None:
    global _CORRUPT_OP
    _CORRUPT_OP = op_name


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """n-dimensional float64 array with optional gradient tracking.

    ``data`` is a row-major numpy array; ``grad`` stays ``None`` until a
    backward pass deposits into it.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """View of the same data with gradient tracking off."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains non-finite values")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are folded in without creating constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        if _CORRUPT_OP == op:
            inner = backward_fn
            backward_fn = lambda g: inner(g * 1.01)
        _TAPE.nodes.append(TapeNode(op, out, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.data.shape))
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; clears the tape afterwards.

    Every requires_grad tensor reachable from ``loss`` ends up with
    ``grad`` holding dLoss/dTensor.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        _TAPE.clear()
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_TAPE.nodes):
        g = node.out.grad
        if g is None:
            continue
        node.backward(g)
    _TAPE.clear()


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data + float(b))
        return _record("add", out, (a,), lambda g: _accum(a, g))
    b = _as_tensor(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record("add", out, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data - float(b))
        return _record("sub", out, (a,), lambda g: _accum(a, g))
    b = _as_tensor(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _record("sub", out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; a python scalar operand is a scalar-multiply."""
    if isinstance(b, (int, float)):
        return scale(a, float(b))
    b = _as_tensor(b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record("mul", out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record("scale", out, (a,), lambda g: _accum(a, g * s))


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, 1.0 / float(b))
    b = _as_tensor(b)
    _check_broadcast("div", a, b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record("div", out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record("matmul", out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expects 2-D, got {a.shape}")
    out = Tensor(a.data.T.copy())
    return _record("transpose", out, (a,), lambda g: _accum(a, g.T))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape
    return _record("reshape", out, (a,), lambda g: _accum(a, g.reshape(orig)))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record("relu", out, (a,), lambda g: _accum(a, g * mask))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record("log", out, (a,), lambda g: _accum(a, g / a.data))


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data))

    def bwd(g):
        _accum(a, g / (2.0 * out.data))

    return _record("sqrt", out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)
    return _record("square", out, (a,), lambda g: _accum(a, g * 2.0 * a.data))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient is zero where the clamp binds."""
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data > floor
    return _record("clamp_min", out, (a,), lambda g: _accum(a, g * mask))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape).copy() if np.ndim(g) else np.full(shape, g))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, shape))

    return _record("sum", out, (a,), bwd)


def tmean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax over the class axis."""
    if a.data.shape[axis] == 0:
        raise ValueError(f"softmax: axis {axis} of shape {a.shape} has extent 0")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - dot))

    return _record("softmax", out, (a,), bwd)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows of a 2-D tensor by integer index array."""
    if a.data.ndim != 2:
        raise ValueError(f"take_rows: expects 2-D, got {a.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    n_rows, n_cols = a.data.shape
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ValueError(f"take_rows: index outside [0, {n_rows})")
    out = Tensor(a.data[idx])

    def bwd(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        # scatter-add with duplicate indices; bincount per column beats np.add.at
        for c in range(n_cols):
            a.grad[:, c] += np.bincount(idx, weights=g[:, c], minlength=n_rows)

    return _record("take_rows", out, (a,), bwd)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation on an HxWxC image.

    kernel has shape (kh, kw, c_in, c_out); the spatial loops run over
    kernel offsets only, each offset contributing one (H*W, c_in) x
    (c_in, c_out) product. pad_mode "wrap" gives circular padding, used
    by the translation-equivariance harness.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d: expects image (H,W,C) and kernel (kh,kw,cin,cout), "
            f"got {x.shape} and {kernel.shape}")
    h, w, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if kcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if pad_mode not in ("zeros", "wrap"):
        raise ValueError(f"conv2d: unknown pad_mode {pad_mode!r}")
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {cout} outputs")
    p, s = int(padding), int(stride)
    if p > 0:
        mode = "constant" if pad_mode == "zeros" else "wrap"
        xp = np.pad(x.data, ((p, p), (p, p), (0, 0)), mode=mode)
    else:
        xp = x.data
    ph, pw = xp.shape[0], xp.shape[1]
    oh = (ph - kh) // s + 1
    ow = (pw - kw) // s + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {kernel.shape} larger than padded input {xp.shape}")

    out_data = np.zeros((oh, ow, cout))
    for ky in range(kh):
        for kx in range(kw):
            # (oh,ow,cin) @ (cin,cout), batched over rows; no patch copy
            out_data += xp[ky:ky + s * oh:s, kx:kx + s * ow:s, :] @ kernel.data[ky, kx]
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data)

    def bwd(g):
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 1)))
        need_x = x.requires_grad
        need_k = kernel.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        gk = np.zeros_like(kernel.data) if need_k else None
        for ky in range(kh):
            for kx in range(kw):
                if need_k:
                    patch = xp[ky:ky + s * oh:s, kx:kx + s * ow:s, :]
                    gk[ky, kx] += np.tensordot(patch, g, axes=([0, 1], [0, 1]))
                if need_x:
                    gxp[ky:ky + s * oh:s, kx:kx + s * ow:s, :] += g @ kernel.data[ky, kx].T
        if need_k:
            _accum(kernel, gk)
        if need_x:
            if p == 0:
                _accum(x, gxp)
            elif pad_mode == "zeros":
                _accum(x, gxp[p:p + h, p:p + w, :])
            else:
                gx = np.zeros_like(x.data)
                iy = (np.arange(ph) - p) % h
                ix = (np.arange(pw) - p) % w
                np.add.at(gx, (iy[:, None], ix[None, :]), gxp)
                _accum(x, gx)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record("conv2d", out, inputs, bwd)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
