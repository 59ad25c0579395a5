"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: just the operations a transformer dual
encoder and its attribution math need. All arithmetic is 64-bit and every
reduction uses a fixed evaluation order (einsum / numpy pairwise sums), so
repeated runs on identical inputs produce bitwise-identical results.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import (
    DegenerateInputError,
    GraphError,
    IndexOutOfRangeError,
    NonFiniteError,
    ShapeError,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError("tensor data contains NaN or Inf")
    return arr


class Tensor:
    """Immutable dense array, optionally registered on a differentiation tape.

    `data` is stored row-major as float64. Tensors created by operations on
    graph-registered inputs join the same graph; plain tensors are constants.
    """

    __slots__ = ("data", "graph", "node_id", "op", "_vjps")

    def __init__(self, data, graph: "Graph | None" = None):
        arr = _as_f64(data)
        if arr is data or (isinstance(data, np.ndarray) and arr.base is data):
            arr = arr.copy()
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self.data = arr
        self.graph = graph
        self.node_id = None
        self.op = "leaf"
        self._vjps: tuple = ()
        if graph is not None:
            graph._register(self)

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, vjps) -> "Tensor":
        """Construct an op result without copying; `vjps` is ((parent, fn), ...)."""
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"operation '{op}' produced NaN or Inf")
        arr.flags.writeable = False
        out.data = arr
        out.op = op
        out.node_id = None
        graph = None
        for parent, _ in vjps:
            if parent.graph is not None:
                if graph is None:
                    graph = parent.graph
                elif graph is not parent.graph:
                    raise GraphError("operands belong to different graphs")
        out.graph = graph
        out._vjps = tuple((p, fn) for p, fn in vjps if p.graph is graph and graph is not None)
        if graph is not None:
            graph._register(out)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = "" if self.graph is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"


class Graph:
    """Append-only tape of tensors; creation order is the topological order."""

    def __init__(self):
        self._tape: list[Tensor] = []
        self.grads: dict[int, np.ndarray] = {}

    def _register(self, t: Tensor) -> None:
        t.node_id = len(self._tape)
        self._tape.append(t)

    def __len__(self) -> int:
        return len(self._tape)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate gradients for every ancestor of `loss` (a scalar on this tape)."""
        if loss.graph is not self:
            raise GraphError("loss tensor does not belong to this graph")
        if loss.data.shape != ():
            raise GraphError(f"loss must be a scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.array(1.0)}
        for t in reversed(self._tape[: loss.node_id + 1]):
            g = grads.get(t.node_id)
            if g is None:
                continue
            for parent, vjp in t._vjps:
                contrib = vjp(g)
                acc = grads.get(parent.node_id)
                if acc is None:
                    grads[parent.node_id] = np.array(contrib, dtype=np.float64)
                else:
                    acc += contrib
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward() target w.r.t. `t`."""
        if t.node_id is None or t.node_id not in self.grads:
            raise GraphError("no gradient recorded for this tensor")
        return self.grads[t.node_id]


def _require_shape(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; einsum keeps the summation order fixed."""
    _require_shape(a.ndim == 2 and b.ndim == 2, "matmul expects 2-D operands")
    _require_shape(
        a.shape[1] == b.shape[0],
        f"matmul inner dims differ: {a.shape} x {b.shape}",
    )
    out = np.einsum("ij,jk->ik", a.data, b.data)
    return Tensor._from_op(
        out,
        "matmul",
        (
            (a, lambda g, bb=b.data: np.einsum("ik,jk->ij", g, bb)),
            (b, lambda g, aa=a.data: np.einsum("ji,jk->ik", aa, g)),
        ),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(a.shape == b.shape, f"add shapes differ: {a.shape} vs {b.shape}")
    return Tensor._from_op(a.data + b.data, "add", ((a, lambda g: g), (b, lambda g: g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(a.shape == b.shape, f"sub shapes differ: {a.shape} vs {b.shape}")
    return Tensor._from_op(a.data - b.data, "sub", ((a, lambda g: g), (b, lambda g: -g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(a.shape == b.shape, f"mul shapes differ: {a.shape} vs {b.shape}")
    return Tensor._from_op(
        a.data * b.data,
        "mul",
        (
            (a, lambda g, bb=b.data: g * bb),
            (b, lambda g, aa=a.data: g * aa),
        ),
    )


def scale(a: Tensor, s) -> Tensor:
    """Multiply by a scalar; `s` may be a float or a 0-d tensor (differentiable)."""
    if isinstance(s, Tensor):
        _require_shape(s.data.shape == (), "scale factor tensor must be 0-d")
        s_val = float(s.data.reshape(()))
        return Tensor._from_op(
            a.data * s_val,
            "scale",
            (
                (a, lambda g: g * s_val),
                (s, lambda g, aa=a.data: np.asarray((g * aa).sum())),
            ),
        )
    s_val = float(s)
    if not math.isfinite(s_val):
        raise NonFiniteError("scale factor must be finite")
    return Tensor._from_op(a.data * s_val, "scale", ((a, lambda g: g * s_val),))


def add_row(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m x n matrix (bias add)."""
    _require_shape(a.ndim == 2 and b.ndim == 1, "add_row expects matrix and vector")
    _require_shape(a.shape[1] == b.shape[0], f"add_row width mismatch: {a.shape} + {b.shape}")
    return Tensor._from_op(
        a.data + b.data,
        "add_row",
        ((a, lambda g: g), (b, lambda g: g.sum(axis=0))),
    )


def log(a: Tensor) -> Tensor:
    """Natural log; non-positive entries surface as a non-finite error."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._from_op(out, "log", ((a, lambda g, aa=a.data: g / aa),))


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return Tensor._from_op(y, "sigmoid", ((a, lambda g, yy=y: g * yy * (1.0 - yy)),))


def softmax(a: Tensor, axis: int) -> Tensor:
    """Rows along `axis` become probabilities summing to 1."""
    if not -a.ndim <= axis < a.ndim:
        raise IndexOutOfRangeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, yy=y, ax=axis):
        inner = (g * yy).sum(axis=ax, keepdims=True)
        return yy * (g - inner)

    return Tensor._from_op(y, "softmax", ((a, vjp),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g, xx=x, c=cdf):
        pdf = np.exp(-0.5 * xx * xx) * _INV_SQRT2PI
        return g * (c + xx * pdf)

    return Tensor._from_op(out, "gelu", ((a, vjp),))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Normalize each row of a 2-D tensor to mean 0 / variance 1, then affine."""
    _require_shape(a.ndim == 2, "layer_norm expects a 2-D tensor")
    n = a.shape[1]
    _require_shape(
        gain.shape == (n,) and bias.shape == (n,),
        f"layer_norm affine params must have shape ({n},)",
    )
    if eps <= 0:
        raise DegenerateInputError("layer_norm eps must be positive")
    mean = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def vjp_a(g, xh=xhat, istd=inv_std, gg=gain.data, width=n):
        dxhat = g * gg
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xh).mean(axis=1, keepdims=True)
        return istd * (dxhat - m1 - xh * m2)

    return Tensor._from_op(
        out,
        "layer_norm",
        (
            (a, vjp_a),
            (gain, lambda g, xh=xhat: (g * xh).sum(axis=0)),
            (bias, lambda g: g.sum(axis=0)),
        ),
    )


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of `table`; gradient scatters (and accumulates) back."""
    _require_shape(table.ndim == 2, "embedding table must be 2-D")
    idx = np.asarray(list(ids), dtype=np.int64)
    if idx.size == 0:
        raise IndexOutOfRangeError("embedding_lookup: empty id list")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexOutOfRangeError(
            f"embedding id out of range [0, {table.shape[0]}): {idx.min()}..{idx.max()}"
        )

    def vjp(g, ii=idx, rows=table.shape[0], width=table.shape[1]):
        out = np.zeros((rows, width))
        np.add.at(out, ii, g)
        return out

    return Tensor._from_op(table.data[idx], "embedding_lookup", ((table, vjp),))


def mean_pool(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise IndexOutOfRangeError(f"mean_pool axis {axis} invalid for shape {a.shape}")
    n = a.shape[axis]

    def vjp(g, ax=axis % a.ndim, count=n, shp=a.shape):
        return np.broadcast_to(np.expand_dims(g, ax), shp) / count

    return Tensor._from_op(a.data.mean(axis=axis), "mean_pool", ((a, vjp),))


def sum_all(a: Tensor) -> Tensor:
    return Tensor._from_op(
        np.asarray(a.data.sum()),
        "sum_all",
        ((a, lambda g, shp=a.shape: np.broadcast_to(g, shp).copy()),),
    )


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Cosine of two 1-D vectors; value in [-1, 1], differentiable in both."""
    _require_shape(u.ndim == 1 and v.ndim == 1, "cosine expects 1-D vectors")
    _require_shape(u.shape == v.shape, f"cosine dims differ: {u.shape} vs {v.shape}")
    nu = float(np.sqrt(np.einsum("i,i->", u.data, u.data)))
    nv = float(np.sqrt(np.einsum("i,i->", v.data, v.data)))
    if nu < 1e-300 or nv < 1e-300:
        raise DegenerateInputError("cosine of a zero-norm vector")
    dot = float(np.einsum("i,i->", u.data, v.data))
    val = dot / (nu * nv)

    def vjp_u(g, uu=u.data, vv=v.data, a=nu, b=nv, d=dot):
        return g * (vv / (a * b) - (d / (a * a * a * b)) * uu)

    def vjp_v(g, uu=u.data, vv=v.data, a=nu, b=nv, d=dot):
        return g * (uu / (a * b) - (d / (a * b * b * b)) * vv)

    return Tensor._from_op(np.asarray(val), "cosine", ((u, vjp_u), (v, vjp_v)))


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    """1-D vector times 2-D matrix: (k,) x (k, n) -> (n,)."""
    _require_shape(v.ndim == 1 and m.ndim == 2, "vecmat expects vector and matrix")
    _require_shape(v.shape[0] == m.shape[0], f"vecmat dims differ: {v.shape} x {m.shape}")
    out = np.einsum("k,kn->n", v.data, m.data)
    return Tensor._from_op(
        out,
        "vecmat",
        (
            (v, lambda g, mm=m.data: np.einsum("n,kn->k", g, mm)),
            (m, lambda g, vv=v.data: np.einsum("k,n->kn", vv, g)),
        ),
    )


def transpose(a: Tensor) -> Tensor:
    _require_shape(a.ndim == 2, "transpose expects a 2-D tensor")
    return Tensor._from_op(a.data.T, "transpose", ((a, lambda g: g.T),))


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    _require_shape(a.ndim == 2, "col_slice expects a 2-D tensor")
    if not 0 <= start < stop <= a.shape[1]:
        raise IndexOutOfRangeError(f"col_slice [{start}:{stop}] invalid for width {a.shape[1]}")

    def vjp(g, s=start, e=stop, shp=a.shape):
        out = np.zeros(shp)
        out[:, s:e] = g
        return out

    return Tensor._from_op(a.data[:, start:stop], "col_slice", ((a, vjp),))


def take_row(a: Tensor, idx: int) -> Tensor:
    _require_shape(a.ndim == 2, "take_row expects a 2-D tensor")
    if not 0 <= idx < a.shape[0]:
        raise IndexOutOfRangeError(f"row {idx} out of range for {a.shape[0]} rows")

    def vjp(g, i=idx, shp=a.shape):
        out = np.zeros(shp)
        out[i] = g
        return out

    return Tensor._from_op(a.data[idx], "take_row", ((a, vjp),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    _require_shape(len(parts) > 0, "concat_rows of nothing")
    width = parts[0].shape[1]
    for p in parts:
        _require_shape(p.ndim == 2 and p.shape[1] == width, "concat_rows width mismatch")
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def make_vjp(i):
        return lambda g, s=offsets[i], e=offsets[i + 1]: g[s:e]

    return Tensor._from_op(
        np.concatenate([p.data for p in parts], axis=0),
        "concat_rows",
        tuple((p, make_vjp(i)) for i, p in enumerate(parts)),
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    _require_shape(len(parts) > 0, "concat_cols of nothing")
    rows = parts[0].shape[0]
    for p in parts:
        _require_shape(p.ndim == 2 and p.shape[0] == rows, "concat_cols height mismatch")
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def make_vjp(i):
        return lambda g, s=offsets[i], e=offsets[i + 1]: g[:, s:e]

    return Tensor._from_op(
        np.concatenate([p.data for p in parts], axis=1),
        "concat_cols",
        tuple((p, make_vjp(i)) for i, p in enumerate(parts)),
    )


def patchify(img: Tensor, patch: int) -> Tensor:
    """Split a C x H x W image into (H/p)(W/p) rows of C*p*p pixels, row-major."""
    _require_shape(img.ndim == 3, "patchify expects a C x H x W tensor")
    c, h, w = img.shape
    if patch <= 0 or h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible into {patch}x{patch} patches")
    gh, gw = h // patch, w // patch
    out = (
        img.data.reshape(c, gh, patch, gw, patch)
        .transpose(1, 3, 0, 2, 4)
        .reshape(gh * gw, c * patch * patch)
    )

    def vjp(g, cc=c, a=gh, b=gw, p=patch):
        return (
            g.reshape(a, b, cc, p, p).transpose(2, 0, 3, 1, 4).reshape(cc, a * p, b * p)
        )

    return Tensor._from_op(out, "patchify", ((img, vjp),))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, the test oracle."""
    if h <= 0:
        raise DegenerateInputError("finite-difference step must be positive")
    base = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += h
        hi = float(f(bumped.reshape(base.shape)))
        bumped[i] -= 2.0 * h
        lo = float(f(bumped.reshape(base.shape)))
        flat[i] = (hi - lo) / (2.0 * h)
    return grad
