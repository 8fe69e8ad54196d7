"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every primitive returns a new ``Tensor`` that remembers its parents and a
closure mapping the output gradient to per-parent gradient contributions.
``backward`` walks the recorded graph in reverse topological order.

Shapes must match exactly; the only implicit expansion is adding a 1-D bias
row-wise to a 2-D tensor. Scalar weights are applied with ``scale``.
"""
from __future__ import annotations

import contextlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

COSINE_EPS = 1e-8

_grad_enabled = True
_kink_log: Optional[list] = None


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NumericError(ArithmeticError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording parents (inference / finite differences)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the sign patterns at every non-differentiable op evaluated inside."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


ArrayLike = Union["Tensor", np.ndarray, float, int]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_const(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


def tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered record of every op feeding ``root`` (inputs first)."""
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def bw(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 1 and B.ndim == 2:
            return B @ g, np.outer(A, g)
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        return g * B, g * A

    return _make(A @ B, (a, b), bw, "matmul")


def spmm(matrix, x: Tensor) -> Tensor:
    """Constant sparse (or dense) matrix times tensor; used for neighbour and segment sums."""
    x = as_tensor(x)
    if x.ndim not in (1, 2) or matrix.shape[1] != x.shape[0]:
        raise ShapeError("spmm", matrix.shape, x.shape)
    mT = matrix.T

    def bw(g):
        return (np.asarray(mT @ g),)

    return _make(np.asarray(matrix @ x.data), (x,), bw, "spmm")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the single value held in ``s``."""
    x, s = as_tensor(x), as_tensor(s)
    if s.data.size != 1:
        raise ShapeError("scale", x.shape, s.shape)
    X, sv = x.data, s.data.reshape(())

    def bw(g):
        return g * sv, np.sum(g * X).reshape(s.shape)

    return _make(X * sv, (x, s), bw, "scale")


def mul_const(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "mul_const")


def add_const(x: Tensor, c: float) -> Tensor:
    return _make(x.data + float(c), (x,), lambda g: (g,), "add_const")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError("concat", *(t.shape for t in tensors))
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _make(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % x.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _make(np.sum(x.data, axis=ax), (x,), bw, "sum_axis")


def row_sum(x: Tensor) -> Tensor:
    """Sum the rows of a matrix (N x d -> d)."""
    return sum(x, axis=0)


def mean(x: Tensor) -> Tensor:
    return mul_const(sum(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def gather(x: Tensor, index) -> Tensor:
    """Rows ``x[index]``; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), bw, "gather")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _kink_log is not None:
        _kink_log.append(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    sign = np.sign(x.data)
    if _kink_log is not None:
        _kink_log.append(sign)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def pow(x: Tensor, exponent: float) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    a = float(exponent)
    X = x.data
    out = X**a

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = a * X ** (a - 1.0)
        if a < 1.0:
            d = np.where(X == 0, 0.0, d)
        return (g * d,)

    return _make(out, (x,), bw, "pow")


def pnorm(x: Tensor, p: float, axis: int = -1) -> Tensor:
    """``(sum |x|^p)^(1/p)`` along ``axis``; the gradient at the zero vector is taken as 0."""
    x = as_tensor(x)
    p = float(p)
    if p < 1:
        raise ValueError(f"p-norm needs p >= 1, got {p}")
    X = x.data
    ax = axis % X.ndim
    sign = np.sign(X)
    if _kink_log is not None:
        _kink_log.append(sign)
    absx = np.abs(X)
    norm = np.sum(absx**p, axis=ax) ** (1.0 / p)

    def bw(g):
        nk = np.expand_dims(norm, ax)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = sign * (absx / nk) ** (p - 1.0)
        d = np.where(nk > 0, d, 0.0)
        return (np.expand_dims(g, ax) * d,)

    return _make(norm, (x,), bw, "pnorm")


def cosine_similarity(u: Tensor, v: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity along the last axis with denominator ``max(|u||v|, eps)``."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError("cosine_similarity", u.shape, v.shape)
    U, V = u.data, v.data
    dot = np.sum(U * V, axis=-1)
    nu = np.sqrt(np.sum(U * U, axis=-1))
    nv = np.sqrt(np.sum(V * V, axis=-1))
    prod = nu * nv
    guarded = prod <= eps
    den = np.where(guarded, eps, prod)
    cos = dot / den

    def bw(g):
        gk = (g / den)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ru = np.where(guarded, 0.0, cos / np.where(guarded, 1.0, nu * nu))[..., None]
            rv = np.where(guarded, 0.0, cos / np.where(guarded, 1.0, nv * nv))[..., None]
        gu = gk * V - g[..., None] * ru * U
        gv = gk * U - g[..., None] * rv * V
        return gu, gv

    return _make(cos, (u, v), bw, "cosine")


def mse(pred: Tensor, target: ArrayLike) -> Tensor:
    """Mean squared error; ``target`` is treated as a constant unless it is a tracked tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gp = g * 2.0 * diff / n
        return gp, -gp

    return _make(np.mean(diff * diff), (pred, target), bw, "mse")


# ------------------------------------------------------------ parameter store


class ParamStore:
    """Ordered name -> trainable ``Tensor`` mapping."""

    def __init__(self, items: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def copy(self) -> "ParamStore":
        return ParamStore((k, t.data) for k, t in self._params.items())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state(self, state) -> None:
        for k, t in self._params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"load {k}", t.shape, value.shape)
            t.data = value.copy()

    def num_scalars(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))


# ------------------------------------------------------------ checkpoint file

_MAGIC = b"ALIGNSIM-PARAMS-1\n"


class CheckpointFormatError(ValueError):
    pass


def dump_params(params: ParamStore, metadata: Optional[dict] = None) -> bytes:
    """Serialize parameters (+ JSON metadata) into a deterministic byte string.

    Layout: magic line, 16-hex-digit header length, newline, UTF-8 JSON header,
    then every tensor's float64 little-endian values in header order.
    """
    index = []
    blobs = []
    offset = 0
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": metadata or {}, "tensors": index}, sort_keys=True).encode("utf-8")
    return _MAGIC + f"{len(header):016x}\n".encode() + header + b"".join(blobs)


def parse_params(buf: bytes) -> tuple[ParamStore, dict]:
    if not buf.startswith(_MAGIC):
        raise CheckpointFormatError("not a parameter checkpoint (bad magic)")
    pos = len(_MAGIC)
    try:
        hlen = int(buf[pos:pos + 16], 16)
    except ValueError:
        raise CheckpointFormatError(f"corrupt header length at byte {pos}") from None
    pos += 17
    if len(buf) < pos + hlen:
        raise CheckpointFormatError(f"truncated header: need {hlen} bytes at byte {pos}, have {len(buf) - pos}")
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt header: {exc}") from None
    body = buf[pos + hlen:]
    params = ParamStore()
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body):
            raise CheckpointFormatError(
                f"truncated data for tensor {entry['name']!r}: need bytes {start}..{start + nbytes}, have {len(body)}"
            )
        arr = np.frombuffer(body[start:start + nbytes], dtype="<f8").reshape(entry["shape"])
        params.add(entry["name"], arr)
    return params, header["metadata"]


def save_params(path, params: ParamStore, metadata: Optional[dict] = None) -> None:
    Path(path).write_bytes(dump_params(params, metadata))


def load_params(path) -> tuple[ParamStore, dict]:
    return parse_params(Path(path).read_bytes())


# ----------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


def _pattern(log: list) -> np.ndarray:
    if not log:
        return np.zeros(0)
    return np.concatenate([np.ravel(a).astype(np.float64) for a in log])


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-6,
    tol: float = 1e-4,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``f`` against central differences.

    Coordinates whose ``+-eps`` perturbation moves any relu/abs/norm input across
    its kink are skipped. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``; the report keeps the max per tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    params.zero_grad()
    with record_kinks() as log:
        loss = f(params)
    base_pattern = _pattern(log)
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss at the base point")
    backward(loss)
    report = GradCheckReport(tol=tol)

    def evaluate() -> tuple[float, np.ndarray]:
        with no_grad(), record_kinks() as klog:
            val = f(params).item()
        return val, _pattern(klog)

    for name in names or params.names():
        t = params[name]
        analytic = t.grad.copy()
        if not np.isfinite(analytic).all():
            raise NumericError(f"non-finite analytic gradient in {name!r}")
        flat = t.data.reshape(-1)
        worst, checked, skipped = 0.0, 0, 0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp, pp = evaluate()
            flat[k] = orig - eps
            fm, pm = evaluate()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite loss while perturbing {name!r}[{k}]")
            if not (np.array_equal(pp, base_pattern) and np.array_equal(pm, base_pattern)):
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[k]
            rel = np.abs(a - numeric) / max(np.abs(a), np.abs(numeric), 1e-8)
            worst = max(worst, float(rel))
            checked += 1
        report.max_rel_error[name] = worst
        report.checked[name] = checked
        report.skipped[name] = skipped
    return report
