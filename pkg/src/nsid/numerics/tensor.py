"""Reverse-mode autodiff over dense float64 arrays.

Only the operations needed by the system-identification models are
provided. Each op records its parents and a closure that maps the output
gradient to parent gradients; :func:`backward` walks a topologically
ordered :class:`Graph` in reverse.
"""

from __future__ import annotations

import contextlib
import os
import string
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG = os.environ.get("NSID_DEBUG", "") not in ("", "0")
_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_debug(enabled: bool) -> None:
    """Toggle finiteness checks after every op."""
    global _DEBUG
    _DEBUG = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.array(data, dtype=np.float64, copy=True) if op == "leaf" else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op
        _check_finite(self.data, op)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self, graph: "Graph | None" = None) -> None:
        backward(self, graph)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return tabs(self)

    def sqrt(self):
        return tsqrt(self)

    def log(self):
        return tlog(self)

    def exp(self):
        return texp(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                 _backward=backward_fn if needs else None, op=op)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- graph ----------------------------------------------------------------
class Graph:
    """Topologically ordered record of the ops reachable from a root."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def build(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Repeated calls accumulate additively.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    graph = graph if graph is not None else Graph.build(loss)
    if not graph.nodes:
        raise ValueError("empty graph")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), bw, "pow")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return _make(out, (a,), bw, "sqrt")


def tlog(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` with gradient passed only above the floor."""
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    # log1p(exp(x)) overflows past ~709; identity is exact to f64 beyond 30.
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


def identity(a: Tensor) -> Tensor:
    return a


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "softplus": softplus,
    "identity": identity,
}


def pointwise(a: Tensor, fn: str) -> Tensor:
    try:
        return ACTIVATIONS[fn](a)
    except KeyError:
        raise ValueError(f"unknown activation {fn!r}; expected one of {sorted(ACTIVATIONS)}") from None


# -- reductions and shape ops --------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def pad2d(a: Tensor, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, widths)

    def bw(g):
        return (g[..., pad:g.shape[-2] - pad, pad:g.shape[-1] - pad],)

    return _make(out, (a,), bw, "pad2d")


# -- einsum ---------------------------------------------------------------
def _pair_contract(sa: str, sb: str, so: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-operand einsum through a single batched matmul (BLAS-backed)."""
    sa_r = "".join(c for c in sa if c in so or c in sb)
    if sa_r != sa:
        a = a.sum(axis=tuple(i for i, c in enumerate(sa) if c not in sa_r))
    sb_r = "".join(c for c in sb if c in so or c in sa_r)
    if sb_r != sb:
        b = b.sum(axis=tuple(i for i, c in enumerate(sb) if c not in sb_r))
    sa, sb = sa_r, sb_r
    batch = [c for c in sa if c in sb and c in so]
    contr = [c for c in sa if c in sb and c not in so]
    a_keep = [c for c in sa if c not in sb]
    b_keep = [c for c in sb if c not in sa]
    if set(so) != set(batch + a_keep + b_keep):
        return np.einsum(f"{sa},{sb}->{so}", a, b)
    size = {c: a.shape[sa.index(c)] for c in sa}
    size.update({c: b.shape[sb.index(c)] for c in sb})
    prod = lambda cs: int(np.prod([size[c] for c in cs])) if cs else 1  # noqa: E731
    if prod(a_keep) * prod(contr) * prod(b_keep) < 4096:
        # many tiny products: the plain einsum loop beats batched matmul
        return np.einsum(f"{sa},{sb}->{so}", a, b)
    A = a.transpose([sa.index(c) for c in batch + a_keep + contr]).reshape(prod(batch), prod(a_keep), prod(contr))
    B = b.transpose([sb.index(c) for c in batch + contr + b_keep]).reshape(prod(batch), prod(contr), prod(b_keep))
    R = np.matmul(A, B).reshape([size[c] for c in batch + a_keep + b_keep])
    order = batch + a_keep + b_keep
    return np.ascontiguousarray(R.transpose([order.index(c) for c in so]))


def _contract(subs: list[str], out_sub: str, datas: list[np.ndarray]) -> np.ndarray:
    if len(datas) == 2:
        return _pair_contract(subs[0], subs[1], out_sub, datas[0], datas[1])
    return np.einsum(",".join(subs) + "->" + out_sub, *datas, optimize=True)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable ``np.einsum`` for explicit-output subscripts.

    Repeated indices inside a single operand are not supported.
    """
    operands = tuple(as_tensor(t) for t in operands)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise ShapeError(f"{subscripts!r} expects {len(in_subs)} operands, got {len(operands)}")
    for sub, t in zip(in_subs, operands):
        if len(set(sub)) != len(sub):
            raise ShapeError(f"repeated index in operand {sub!r} is not supported")
        if len(sub) != t.ndim:
            raise ShapeError(f"operand {sub!r} has {t.ndim} dims")
    datas = [t.data for t in operands]
    out = _contract(in_subs, out_sub, datas)

    def bw(g):
        grads = []
        for i, (sub, t) in enumerate(zip(in_subs, operands)):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [out_sub] + [s for j, s in enumerate(in_subs) if j != i]
            other_data = [g] + [d for j, d in enumerate(datas) if j != i]
            available = set("".join(others))
            kept = "".join(c for c in sub if c in available)
            gi = _contract(others, kept, other_data)
            if kept != sub:
                expand = [sub.index(c) for c in sub if c not in available]
                for ax in sorted(expand):
                    gi = np.expand_dims(gi, ax)
                gi = np.broadcast_to(gi, t.shape)
            grads.append(gi)
        return grads

    return _make(np.asarray(out, dtype=np.float64), operands, bw, "einsum")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    letters = string.ascii_lowercase
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul supports 2-D operands only")
    return einsum(f"{letters[0]}{letters[1]},{letters[1]}{letters[2]}->{letters[0]}{letters[2]}", a, b)


# -- convolution ----------------------------------------------------------
def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patches as rows: ``[B*Ho*Wo, C*kh*kw]``."""
    B, C, H, W = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * (H - kh + 1) * (W - kw + 1), C * kh * kw)


def _direct_corr(x: np.ndarray, k: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Valid cross-correlation as one matrix product over im2col patches."""
    B, C, H, W = x.shape
    O, _, kh, kw = k.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    if cols is None:
        cols = _im2col(x, kh, kw)
    out = cols @ k.reshape(O, -1).T  # B*Ho*Wo, O
    return np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))


def _direct_grad_input(g: np.ndarray, k: np.ndarray, in_shape) -> np.ndarray:
    """Adjoint of :func:`_direct_corr` with respect to the input (col2im)."""
    B, O, Ho, Wo = g.shape
    _, C, kh, kw = k.shape
    gcols = g.transpose(0, 2, 3, 1).reshape(-1, O) @ k.reshape(O, -1)
    gcols = gcols.reshape(B, Ho, Wo, C, kh, kw)
    gx = np.zeros(in_shape)
    for u in range(kh):
        for v in range(kw):
            gx[:, :, u:u + Ho, v:v + Wo] += gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return gx


def _fft_spectra(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return sfft.rfft2(x, s=shape)


def _spectral_mix(a: np.ndarray, b: np.ndarray, a_sub: str, b_sub: str, out_sub: str) -> np.ndarray:
    """Channel contraction performed independently at every frequency."""
    fa = a.reshape(a.shape[0], a.shape[1], -1)
    fb = b.reshape(b.shape[0], b.shape[1], -1)
    out = np.einsum(f"{a_sub}f,{b_sub}f->f{out_sub}", fa, fb, optimize=True)
    return out


def _fft_corr(x: np.ndarray, k: np.ndarray, X: np.ndarray | None = None):
    B, C, H, W = x.shape
    O, _, kh, kw = k.shape
    shape = (sfft.next_fast_len(H, real=True), sfft.next_fast_len(W, real=True))
    if X is None:
        X = _fft_spectra(x, shape)
    Kf = _fft_spectra(k[:, :, ::-1, ::-1], shape)
    fshape = X.shape[-2:]
    Xm = np.ascontiguousarray(X.reshape(B, C, -1).transpose(2, 0, 1))
    Km = np.ascontiguousarray(Kf.reshape(O, C, -1).transpose(2, 1, 0))
    Y = np.matmul(Xm, Km)  # F,B,O
    Y = Y.transpose(1, 2, 0).reshape(B, O, *fshape)
    y = sfft.irfft2(Y, s=shape)
    return np.ascontiguousarray(y[:, :, kh - 1:H, kw - 1:W]), X, shape


def _choose_method(x_shape, k_shape) -> str:
    # on one core the spectral path wins for anything but tiny kernels or
    # tiny problems (measured forward + backward, 5x5 kernels and up)
    B, C, H, W = x_shape
    O, _, kh, kw = k_shape
    if kh * kw <= 9 or B * C * O * H * W <= 4096:
        return "direct"
    return "fft"


def conv2d(x: Tensor, kernel: Tensor, method: str = "auto") -> Tensor:
    """Valid 2-D cross-correlation.

    ``out[b,o,i,j] = sum_{c,u,v} x[b,c,i+u,j+v] * kernel[o,c,u,v]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ShapeError(f"channel axis mismatch: input axis 1 has {C}, kernel axis 1 has {Ck}")
    if kh > H or kw > W:
        raise ShapeError(f"kernel spatial axes (2,3) of size {(kh, kw)} exceed input axes (2,3) of size {(H, W)}")
    if method == "auto":
        method = _choose_method(x.shape, kernel.shape)
    xd, kd = x.data, kernel.data

    if method == "direct":
        cols = _im2col(xd, kh, kw)
        out = _direct_corr(xd, kd, cols)
        if not kernel.requires_grad:
            cols = None  # only the kernel gradient needs the patches

        def bw(g):
            gx = gk = None
            if kernel.requires_grad:
                gk = (g.transpose(1, 0, 2, 3).reshape(O, -1) @ cols).reshape(O, C, kh, kw)
            if x.requires_grad:
                gx = _direct_grad_input(g, kd, xd.shape)
            return gx, gk

    elif method == "fft":
        out, X, shape = _fft_corr(xd, kd)

        def bw(g):
            gx = gk = None
            G = _fft_spectra(g, shape)  # zero-padded to the working size
            fshape = G.shape[-2:]
            Gm = np.ascontiguousarray(G.reshape(B, O, -1).transpose(2, 0, 1))  # F,B,O
            if kernel.requires_grad:
                Xm = np.ascontiguousarray(X.reshape(B, C, -1).transpose(2, 0, 1))  # F,B,C
                R = np.matmul(np.conj(Gm).transpose(0, 2, 1), Xm)  # F,O,C
                r = sfft.irfft2(R.transpose(1, 2, 0).reshape(O, C, *fshape), s=shape)
                gk = np.ascontiguousarray(r[:, :, :kh, :kw])
            if x.requires_grad:
                Kf = _fft_spectra(kd, shape)
                Km = np.ascontiguousarray(Kf.reshape(O, C, -1).transpose(2, 0, 1))  # F,O,C
                Y = np.matmul(Gm, Km)  # F,B,C
                y = sfft.irfft2(Y.transpose(1, 2, 0).reshape(B, C, *fshape), s=shape)
                gx = np.ascontiguousarray(y[:, :, :H, :W])
            return gx, gk

    else:
        raise ValueError(f"unknown conv2d method {method!r}")

    return _make(out, (x, kernel), bw, "conv2d")


# -- batch normalization -------------------------------------------------
class UninitializedStatsError(RuntimeError):
    """Eval-mode batch norm requested before any training-mode statistics exist."""


class BatchNormStats:
    """Per-channel running mean/variance updated by exponential moving average."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.initialized = False

    def copy(self) -> "BatchNormStats":
        other = BatchNormStats(len(self.mean), self.momentum, self.eps)
        other.mean, other.var, other.initialized = self.mean.copy(), self.var.copy(), self.initialized
        return other


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str, stats: BatchNormStats) -> Tensor:
    """Per-channel normalization over (B, H, W) followed by a learnable affine map."""
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},)")
    g4 = gamma.data.reshape(1, C, 1, 1)
    b4 = beta.data.reshape(1, C, 1, 1)
    eps = stats.eps

    if mode == "eval":
        if not stats.initialized:
            raise UninitializedStatsError("batchnorm running statistics are uninitialized")
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean.reshape(1, C, 1, 1)) * inv.reshape(1, C, 1, 1)

        def bw(g):
            gx = g * (g4 * inv.reshape(1, C, 1, 1)) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return _make(g4 * xhat + b4, (x, gamma, beta), bw, "batchnorm")

    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    count = B * H * W
    if count < 2:
        raise ShapeError("train-mode batchnorm needs at least two values per channel")
    mean = x.data.mean(axis=(0, 2, 3))
    centered = x.data - mean.reshape(1, C, 1, 1)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv.reshape(1, C, 1, 1)

    m = stats.momentum
    stats.mean = (1.0 - m) * stats.mean + m * mean
    stats.var = (1.0 - m) * stats.var + m * var * count / (count - 1)
    stats.initialized = True

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            gxhat = g * g4
            gx = (inv.reshape(1, C, 1, 1) / count) * (
                count * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        return gx, dgamma, dbeta

    return _make(g4 * xhat + b4, (x, gamma, beta), bw, "batchnorm")
