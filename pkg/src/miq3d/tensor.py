"""Minimal reverse-mode autodiff over dense numpy arrays.

Exactly the operations the segmentation model needs: matmul, 3D
convolution, softmax/log-softmax, pointwise activations, layer norm,
block average-pooling, trilinear sampling/resizing, reductions, and the
indexing/reshaping glue between them. Forward passes record a dynamic
tape (parents + gradient function per tensor); ``Tensor.backward`` walks
it in reverse topological order. Training paths run in float32,
verification oracles in float64; the ops preserve whatever dtype flows
in.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    NonFiniteError,
    PromptBoundsError,
    ShapeMismatchError,
    UsageError,
)

_FINITE_CHECKS = True
_GRAD_ENABLED = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard applied at every op boundary."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


@contextmanager
def no_grad():
    """Skip tape recording inside the block (inference / matching paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(data: np.ndarray, where: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by '{where}'")


class Tensor:
    """Dense N-d array with optional gradient tracking.

    ``grad`` is accumulated additively by :meth:`backward`; running
    backward twice on the same graph doubles every gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        self.data = arr
        _check_finite(arr, op)
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable] = None
        self.op = op

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- autodiff ------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        Only scalar roots are supported; accumulation is additive.
        """
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = flows.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                # No op ever mutates a grad in place, so adopting g directly is safe.
                t.grad = g if t.grad is None else t.grad + g
            if t._grad_fn is None:
                continue
            for parent, pg in zip(t._parents, t._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flows.get(id(parent))
                flows[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter:
    """Named trainable tensor; frozen parameters keep a zero gradient.

    Gradients are held lazily: until backward touches the tensor, the
    stored grad stays ``None`` and reads materialize zeros.
    """

    __slots__ = ("tensor", "name", "frozen")

    def __init__(self, data: np.ndarray, name: str, frozen: bool = False):
        self.tensor = Tensor(np.asarray(data), requires_grad=not frozen, op=f"param:{name}")
        self.name = name
        self.frozen = frozen

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        if self.tensor.grad is None:
            return np.zeros_like(self.tensor.data)
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, frozen={self.frozen})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64), op="const")


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    # Python scalars go through shift() so float32 graphs stay float32.
    if isinstance(b, (int, float)):
        return shift(_wrap(a), b)
    if isinstance(a, (int, float)):
        return shift(_wrap(b), a)
    a, b = _wrap(a), _wrap(b)
    _broadcast_check(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def shift(a: Tensor, s: float) -> Tensor:
    return _make(a.data + float(s), (a,), lambda g: (g,), "shift")


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(_wrap(a), b)
    if isinstance(a, (int, float)):
        return scale(_wrap(b), a)
    a, b = _wrap(a), _wrap(b)
    _broadcast_check(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(_wrap(a), 1.0 / b)
    a, b = _wrap(a), _wrap(b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data

    def grad_fn(g):
        da = _unbroadcast(g / b.data, a.shape)
        db = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return da, db

    return _make(out, (a, b), grad_fn, "div")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # One exp of a non-positive argument; stable in both tails.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed from logits without overflow."""
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 0.0, x) - np.log1p(z)
    sig_neg = np.where(x >= 0, z / (1.0 + z), 1.0 / (1.0 + z))
    return _make(out, (a,), lambda g: (g * sig_neg,), "logsigmoid")


# -- reductions / shape ------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).copy(),)

    return _make(data, (a,), grad_fn, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def index_select(a: Tensor, indices) -> Tensor:
    """Rows of ``a`` along axis 0; scatter-add gradient."""
    idx = np.asarray(indices, dtype=np.intp)

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), grad_fn, "index_select")


# -- linear algebra ----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul requires matrices, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner extents disagree for {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatchError(f"matmul: batch extents disagree for {a.shape} x {b.shape}") from None

    def grad_fn(g):
        da = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        db = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return da, db

    return _make(a.data @ b.data, (a, b), grad_fn, "matmul")


# -- normalization -----------------------------------------------------

def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), grad_fn, "softmax")


def log_softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def grad_fn(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), grad_fn, "log_softmax")


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError("layernorm eps must be positive")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def grad_fn(g):
        dxhat = g * gamma.data
        n = a.shape[-1]
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(a.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        return dx, dgamma, dbeta

    return _make(xhat * gamma.data + beta.data, (a, gamma, beta), grad_fn, "layernorm")


# -- volumetric ops ----------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Unfold [C,D,H,W] into [k^3*C, n_windows], offset-major row order.

    Row block j holds channel slices for kernel offset j (row-major over
    the k^3 offsets), so weights must be flattened offset-major too. The
    per-offset strided copies keep the input's unit stride innermost,
    which is much faster than transposing a sliding-window view.
    """
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    do = (xp.shape[1] - k) // stride + 1
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    if k == 1 and stride == 1:
        return xp.reshape(c, do * ho * wo), (do, ho, wo)
    col = np.empty((k**3, c, do * ho * wo), dtype=x.dtype)
    j = 0
    for a in range(k):
        for b in range(k):
            for cc in range(k):
                col[j].reshape(c, do, ho, wo)[...] = xp[
                    :, a : a + do * stride : stride, b : b + ho * stride : stride, cc : cc + wo * stride : stride
                ]
                j += 1
    return col.reshape(k**3 * c, do * ho * wo), (do, ho, wo)


def _wflat_offset_major(w: np.ndarray) -> np.ndarray:
    """[Cout,Cin,k,k,k] -> [Cout, k^3*Cin] matching _im2col row order."""
    cout, cin, k, _, _ = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 3, 4, 1)).reshape(cout, k**3 * cin)


def conv3d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate ``x`` [Cin,D,H,W] with ``w`` [Cout,Cin,k,k,k]."""
    cin, d, h, wd = x.shape
    cout, cin_w, k, k2, k3 = w.shape
    if cin != cin_w or k != k2 or k != k3:
        raise ShapeMismatchError(f"conv3d: input {x.shape} incompatible with kernel {w.shape}")
    if k % 2 == 0:
        raise ConfigError(f"conv3d kernel size must be odd, got {k}")
    for extent in (d, h, wd):
        span = extent + 2 * pad - k
        if span < 0 or span % stride != 0:
            raise ConfigError(
                f"conv3d: output extent not integral for input {extent}, k={k}, stride={stride}, pad={pad}"
            )

    col, (do, ho, wo) = _im2col(x.data, k, stride, pad)
    wflat = _wflat_offset_major(w.data)
    out = (wflat @ col).reshape(cout, do, ho, wo)

    def grad_fn(g):
        gflat = g.reshape(cout, do * ho * wo)
        dw = (gflat @ col.T).reshape(cout, k, k, k, cin).transpose(0, 4, 1, 2, 3)
        if stride == 1:
            # dx is itself a correlation: flipped kernel, swapped channel axes.
            wsw = w.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
            colg, _ = _im2col(g, k, 1, k - 1 - pad)
            dx = (_wflat_offset_major(wsw) @ colg).reshape(x.shape)
        else:
            dcol = (wflat.T @ gflat).reshape(k, k, k, cin, do, ho, wo)
            dxp_shape = (cin, d + 2 * pad, h + 2 * pad, wd + 2 * pad)
            dxp = np.zeros(dxp_shape, dtype=g.dtype)
            for a in range(k):
                for b in range(k):
                    for c in range(k):
                        dxp[
                            :, a : a + do * stride : stride, b : b + ho * stride : stride, c : c + wo * stride : stride
                        ] += dcol[a, b, c]
            dx = dxp[:, pad : pad + d, pad : pad + h, pad : pad + wd] if pad else dxp
        return dx, dw

    return _make(out, (x, w), grad_fn, "conv3d")


def avgpool_downsample(x: Tensor, out_shape) -> Tensor:
    """Mean over non-overlapping blocks; extents must divide evenly."""
    c, d, h, w = x.shape
    do, ho, wo = out_shape
    if d % do or h % ho or w % wo:
        raise ConfigError(f"avgpool_downsample: {x.shape[1:]} not divisible by {tuple(out_shape)}")
    fd, fh, fw = d // do, h // ho, w // wo
    blocks = x.data.reshape(c, do, fd, ho, fh, wo, fw)
    out = blocks.mean(axis=(2, 4, 6))

    def grad_fn(g):
        gx = g.reshape(c, do, 1, ho, 1, wo, 1) / (fd * fh * fw)
        return (np.broadcast_to(gx, blocks.shape).reshape(x.shape).copy(),)

    return _make(out, (x,), grad_fn, "avgpool_downsample")


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """Linear interpolation weights mapping an n_in grid onto n_out samples.

    Voxel-center aligned: output sample i reads input coordinate
    (i + 0.5) * n_in / n_out - 0.5, clamped at the edges.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.minimum(src.astype(np.intp), max(n_in - 2, 0))
    frac = src - lo
    hi = np.minimum(lo + 1, n_in - 1)
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_trilinear(x: Tensor, out_shape) -> Tensor:
    """Trilinearly resample [C,d,h,w] onto a new (D,H,W) grid."""
    _, d, h, w = x.shape
    do, ho, wo = out_shape
    md = _interp_matrix(do, d, x.dtype)
    mh = _interp_matrix(ho, h, x.dtype)
    mw = _interp_matrix(wo, w, x.dtype)

    def apply(arr, a0, a1, a2):
        arr = np.einsum("ab,cbij->caij", a0, arr, optimize=True)
        arr = np.einsum("ab,cibj->ciaj", a1, arr, optimize=True)
        return np.einsum("ab,cijb->cija", a2, arr, optimize=True)

    out = apply(x.data, md, mh, mw)

    def grad_fn(g):
        return (apply(g, md.T, mh.T, mw.T),)

    return _make(out, (x,), grad_fn, "resize_trilinear")


def trilinear_sample(f: Tensor, point) -> Tensor:
    """Interpolate [C,D,H,W] features at a continuous (d,h,w) coordinate.

    Integer coordinates hit voxel centers; valid range per axis is
    [0, extent-1].
    """
    _, d, h, w = f.shape
    pd, ph, pw = (float(v) for v in point)
    for value, extent, axis in ((pd, d, "d"), (ph, h, "h"), (pw, w, "w")):
        if not (0.0 <= value <= extent - 1):
            raise PromptBoundsError(f"point {point} outside volume along {axis} (extent {extent})")

    idx, frac = [], []
    for value, extent in ((pd, d), (ph, h), (pw, w)):
        lo = min(int(np.floor(value)), max(extent - 2, 0))
        idx.append((lo, min(lo + 1, extent - 1)))
        frac.append(value - lo)

    corners = []
    for bd in (0, 1):
        for bh in (0, 1):
            for bw in (0, 1):
                weight = (
                    (frac[0] if bd else 1 - frac[0])
                    * (frac[1] if bh else 1 - frac[1])
                    * (frac[2] if bw else 1 - frac[2])
                )
                corners.append(((idx[0][bd], idx[1][bh], idx[2][bw]), weight))

    out = np.zeros(f.shape[0], dtype=f.dtype)
    for (ci, cj, ck), weight in corners:
        out += weight * f.data[:, ci, cj, ck]

    def grad_fn(g):
        gf = np.zeros_like(f.data)
        for (ci, cj, ck), weight in corners:
            gf[:, ci, cj, ck] += weight * g
        return (gf,)

    return _make(out, (f,), grad_fn, "trilinear_sample")
