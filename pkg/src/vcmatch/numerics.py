"""Small reverse-mode autodiff over numpy arrays, Adam, and a gradient checker.

Only the operations the inclusion model needs are implemented. Every op
records a closure that accumulates exact gradients into its parents; calling
``Tensor.backward`` on a scalar walks the tape in reverse topological order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out the axes that were broadcast in the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE) if not isinstance(data, np.ndarray) else data
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(DTYPE)
        _check_finite(self.data, _op)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
    out = Tensor(data, _parents=parents, _op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), "add", backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: ((a, -g),))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return ((a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape)))

    return _make(a.data * b.data, (a, b), "mul", backward)


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # one BLAS call for stacked rows times a single matrix
    if w.ndim == 2 and x.ndim > 2:
        return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])
    return x @ w


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def backward(g):
        out = []
        if a.requires_grad:
            out.append((a, _unbroadcast(_mm(g, np.swapaxes(b.data, -1, -2)), a.shape)))
        if b.requires_grad:
            if b.ndim == 2:
                # fold the batch axes instead of building one weight gradient per batch item
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            out.append((b, gb))
        return tuple(out)

    return _make(_mm(a.data, b.data), (a, b), "matmul", backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W + b`` with ``W`` of shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: ((a, g * (1.0 - y * y)),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), "sigmoid", lambda g: ((a, g * y * (1.0 - y)),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError("log of non-positive value; clamp first")
    return _make(np.log(a.data), (a,), "log", lambda g: ((a, g / a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), "clip", lambda g: ((a, g * inside),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((a, y * (g - (g * y).sum(axis=axis, keepdims=True))),)

    return _make(y, (a,), "softmax", backward)


def normalize(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero mean and unit variance over the last axis (layer normalisation without gain or bias)."""
    centred = a.data - a.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    y = centred * inv_std

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((a, inv_std * (g - gm - y * gy)),)

    return _make(y, (a,), "normalize", backward)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g / n, a.shape).copy()),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), "mean", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(zip(tensors, np.split(g, splits, axis=ax)))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: incompatible shapes {tensors[0].shape} and {t.shape}")

    def backward(g):
        return tuple((t, np.take(g, i, axis=axis)) for i, t in enumerate(tensors))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", backward)


def gather_rows(table: Tensor, index) -> Tensor:
    """Embedding lookup: ``table[index]`` along the first axis."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table of shape {table.shape}")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return ((table, out),)

    return _make(table.data[index], (table,), "gather", backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(y, (a,), "reshape", lambda g: ((a, g.reshape(a.shape)),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), "transpose", lambda g: ((a, np.transpose(g, inverse)),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, index, g)
        return ((a, out),)

    return _make(a.data[index], (a,), "getitem", backward)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Mapping[str, np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# --------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
               probes: int = 20, eps: float = 1e-5, seed: int = 0,
               floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``probes`` coordinates are drawn per parameter. ``params`` arrays are
    perturbed in place and restored.
    """
    if eps <= 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name!r} is {arr.dtype}")

    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    loss_fn(tensors).backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}

    def evaluate() -> float:
        return float(loss_fn({k: Tensor(v) for k, v in params.items()}).data.sum())

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], config: dict) -> None:
    meta = json.dumps({"version": CHECKPOINT_VERSION, "config": config}, sort_keys=True)
    payload = {f"param/{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        arrays = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    return arrays, meta["config"]


def parameters_finite(arrays: Iterable[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)
