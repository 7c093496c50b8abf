"""Dense tensors with reverse-mode automatic differentiation.

A small tape-based engine on top of numpy, just big enough to train the
desk-scale MLP/CNN models and to differentiate losses with respect to
inputs (for attacks) and weights (for SGD). Ops keep explicit shapes:
the only broadcast allowed anywhere is the bias add inside ``linear``
and ``conv2d``.

Conventions that matter downstream:
  * relu'(0) == 0 (subgradient choice; FGSM signs depend on it).
  * default dtype is float64 so gradient checks can use tight tolerances;
    pass ``dtype=np.float32`` for speed.
  * a graph is consumable once: calling backward a second time through
    already-consumed nodes raises GraphUsageError.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, GraphUsageError

DEFAULT_DTYPE = np.float64


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """N-dimensional array plus the tape hooks needed for backward."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    # -- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def _tracked(self) -> bool:
        """True if gradients must flow to or through this tensor."""
        return self.requires_grad or bool(self._parents)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operators (strict shapes, no implicit broadcasting) ----------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scale_shift(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale_shift(other, -1.0, 0.0))
        return scale_shift(self, 1.0, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale_shift(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return scale_shift(self, -1.0, 0.0)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphUsageError(f"item() needs a scalar tensor, got shape {tuple(self.shape)}")
        return float(self.data.reshape(()))

    # -- reverse pass --------------------------------------------------

    def backward(self):
        """Propagate d(self)/d(leaf) into ``grad`` of every requires_grad leaf.

        ``self`` must be scalar. The visited part of the graph is marked
        consumed; a second backward through it raises GraphUsageError.
        """
        if self.data.size != 1:
            raise GraphUsageError(
                f"backward() requires a scalar loss, got shape {tuple(self.shape)}"
            )
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._consumed:
                raise GraphUsageError("graph already consumed by a previous backward()")
            stack.append((node, True))
            for parent in node._parents:
                if parent._tracked() and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node._backward(node.grad)
                node._consumed = True
                node._backward = None
            if not node.requires_grad:
                node.grad = None  # free intermediate buffers


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if p._tracked())
    if tracked:
        out._parents = tracked
        out._backward = backward
    return out


# -- elementwise and reduction ops ------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {tuple(a.shape)} vs {tuple(b.shape)}")

    def backward(g):
        if a._tracked():
            _accumulate(a, g)
        if b._tracked():
            _accumulate(b, g)

    return _make_node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {tuple(a.shape)} vs {tuple(b.shape)}")

    def backward(g):
        if a._tracked():
            _accumulate(a, g * b.data)
        if b._tracked():
            _accumulate(b, g * a.data)

    return _make_node(a.data * b.data, (a, b), backward)


def scale_shift(a: Tensor, scale: float, shift: float) -> Tensor:
    """a * scale + shift with python scalars (no tensor broadcast)."""

    def backward(g):
        if a._tracked():
            _accumulate(a, g * scale)

    return _make_node(a.data * scale + shift, (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    def backward(g):
        if a._tracked():
            _accumulate(a, np.full_like(a.data, g.reshape(())))

    return _make_node(np.asarray(a.data.sum()), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: {tuple(a.shape)} to {shape}")

    def backward(g):
        if a._tracked():
            _accumulate(a, g.reshape(a.shape))

    return _make_node(a.data.reshape(shape), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # relu'(0) == 0

    def backward(g):
        if a._tracked():
            _accumulate(a, g * mask)

    return _make_node(np.maximum(a.data, 0), (a,), backward)


# -- layers ------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[B,I] @ w[I,O] + b[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: x {tuple(x.shape)} vs w {tuple(w.shape)}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise DimensionError(f"linear: b {tuple(b.shape)} vs w {tuple(w.shape)}")

    def backward(g):
        if x._tracked():
            _accumulate(x, g @ w.data.T)
        if w._tracked():
            _accumulate(w, x.data.T @ g)
        if b._tracked():
            _accumulate(b, g.sum(axis=0))

    return _make_node(x.data @ w.data + b.data, (x, w, b), backward)


def conv2d(x: Tensor, k: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,C,H,W] with k[F,C,Kh,Kw] plus bias b[F]."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise DimensionError(f"conv2d: x {tuple(x.shape)} vs k {tuple(k.shape)}")
    bn, c, h, w = x.shape
    f, ck, kh, kw = k.shape
    if ck != c:
        raise DimensionError(f"conv2d: x {tuple(x.shape)} vs k {tuple(k.shape)}")
    if b.data.ndim != 1 or b.shape[0] != f:
        raise DimensionError(f"conv2d: b {tuple(b.shape)} vs k {tuple(k.shape)}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: stride={stride}, padding={padding}")
    span_h = h + 2 * padding - kh
    span_w = w + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ConfigError(
            f"conv2d: input {h}x{w} with kernel {kh}x{kw}, stride {stride}, "
            f"padding {padding} gives a non-integral output size"
        )
    ho = span_h // stride + 1
    wo = span_w // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [B, H', W', C*Kh*Kw] patch matrix, contiguous for the matmuls below
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bn, ho * wo, c * kh * kw)
    kmat = k.data.reshape(f, c * kh * kw)
    out = cols @ kmat.T
    out = out.transpose(0, 2, 1).reshape(bn, f, ho, wo) + b.data[None, :, None, None]

    def backward(g):
        gm = g.reshape(bn, f, ho * wo).transpose(0, 2, 1)
        if k._tracked():
            _accumulate(k, np.tensordot(gm, cols, axes=([0, 1], [0, 1])).reshape(k.shape))
        if b._tracked():
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if x._tracked():
            dcols = gm @ kmat
            dwin = dcols.reshape(bn, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    dxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += dwin[:, :, :, :, u, v]
            _accumulate(x, dxp[:, :, padding:padding + h, padding:padding + w])

    return _make_node(out, (x, k, b), backward)


# -- loss --------------------------------------------------------------


def one_hot(labels: np.ndarray, num_classes: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[y], log-sum-exp stabilized.

    ``y`` is a one-hot [B,K] array (constant, no gradient).
    """
    y = np.asarray(y, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"cross_entropy: logits {tuple(logits.shape)} vs labels {tuple(y.shape)}")
    bn = logits.shape[0]
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(sez)
    loss = -(y * log_probs).sum() / bn

    def backward(g):
        if logits._tracked():
            softmax = ez / sez
            _accumulate(logits, g.reshape(()) * (softmax - y) / bn)

    return _make_node(np.asarray(loss), (logits,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax for metrics (no graph)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


# -- gradient oracle ----------------------------------------------------


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate."""
    if h <= 0:
        raise ConfigError(f"finite_difference_gradient: h={h} must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x0))
        flat[i] = orig - h
        fm = float(f(x0))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
