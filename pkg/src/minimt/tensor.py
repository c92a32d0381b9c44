"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes its value with numpy and, when at least one input
requires a gradient and recording is enabled, appends a node to the tape of
the current thread. ``backward`` walks that tape in reverse recording order,
which is always a valid topological order, and then clears it.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -1e18
LAYER_NORM_EPS = 1e-6

_MASK64 = (1 << 64) - 1
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_GOLDEN = 0x9E3779B97F4A7C15


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rule."""


class GradientError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# random numbers


class RngState:
    """xorshift64* generator.

    Scalar draws advance the 64-bit state with::

        x ^= x >> 12; x ^= x << 25; x ^= x >> 27
        out = x * 0x2545F4914F6CDD1D  (mod 2**64)

    Bulk draws (``uniform_array``) take one scalar draw ``k`` as a key and
    produce element ``i`` as ``splitmix64_mix(k + (i + 1) * 0x9E3779B97F4A7C15)``,
    so a block of any size costs one state advance. A seed of 0 is replaced by
    0x9E3779B97F4A7C15 because xorshift has no zero state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.state = self.seed or _GOLDEN

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits of a draw."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        # multiply-shift is good enough for shuffling; bias is < n / 2**64
        return (self.next_u64() * n) >> 64

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        key = np.uint64(self.next_u64())
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = key + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        return ((z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self) -> "RngState":
        return RngState(self.next_u64())

    def get_state(self) -> int:
        return self.state

    def set_state(self, state: int) -> None:
        self.state = int(state) & _MASK64


# ---------------------------------------------------------------------------
# tape


class _TapeLocal(threading.local):
    def __init__(self):
        self.nodes: list[tuple["Tensor", Callable[[np.ndarray], None]]] = []
        self.enabled = True


_tape = _TapeLocal()


@contextlib.contextmanager
def no_grad():
    prev = _tape.enabled
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def clear_tape() -> None:
    _tape.nodes.clear()


def tape_size() -> int:
    return len(_tape.nodes)


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named trainable tensor. Frozen parameters never receive gradients."""

    __slots__ = ("name", "_frozen")

    def __init__(self, name: str, data, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not value
        if value:
            self.grad = None

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = _tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _tape.nodes.append((out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _record(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _record(a.data * b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: _accumulate(a, -g))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _record(a.data @ b.data, (a, b), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(y, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _record(np.where(pos, a.data, 0.0), (a,), lambda g: _accumulate(a, g * pos))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(y, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        _accumulate(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _record(y, (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, splits, axis=ax)):
            _accumulate(t, part)

    return _record(np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes {ts[0].shape} and {t.shape} differ")

    def bw(g):
        for i, t in enumerate(ts):
            _accumulate(t, np.take(g, i, axis=axis))

    return _record(np.stack([t.data for t in ts], axis=axis), ts, bw)


def lookup(table, ids) -> Tensor:
    """Row lookup: ``out[..., :] = table[ids[...], :]``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"lookup: ids out of range for table {table.shape}")

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
            _accumulate(table, full)

    return _record(table.data[ids], (table,), bw)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis with biased variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            _accumulate(x, inv * (gh - gh.mean(axis=-1, keepdims=True)
                                  - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return _record(xhat * gain.data + bias.data, (x, gain, bias), bw)


def masked_fill(a, mask, value: float = NEG_INF) -> Tensor:
    """Replace entries where ``mask`` is true by ``value`` (mask broadcasts)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(a.shape, mask.shape)
    except ValueError:
        raise ShapeError(f"masked_fill: mask {mask.shape} does not broadcast to {a.shape}") from None
    keep = ~mask
    return _record(np.where(mask, value, a.data), (a,),
                   lambda g: _accumulate(a, _unbroadcast(g * keep, a.shape)))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,),
                   lambda g: _accumulate(a, np.transpose(g, inv)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _record(y, (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def take(a, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        _accumulate(a, full)

    return _record(a.data[index], (a,), bw)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dropout(a, rate: float, rng: RngState | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    a = as_tensor(a)
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.uniform_array(a.shape) >= rate) / (1.0 - rate)
    return _record(a.data * keep, (a,), lambda g: _accumulate(a, g * keep))


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "stack": lambda *ts, axis=0: stack(ts, axis=axis),
    "lookup": lookup,
    "layer_norm": layer_norm,
    "masked_fill": masked_fill,
    "transpose": transpose,
    "reshape": reshape,
    "take": take,
    "mean": mean,
    "sum": sum,
    "dropout": dropout,
}


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Look up a primitive by name and apply it to ``inputs``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; known: {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# differentiation


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(x) to every tensor recorded on this thread's tape."""
    nodes = _tape.nodes
    try:
        if loss.data.size != 1 or loss.ndim > 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(nodes):
            if out.grad is not None:
                fn(out.grad)
    finally:
        nodes.clear()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def check_gradients(params: Sequence[Parameter], loss_fn: Callable[[], Tensor],
                    step: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6) -> dict:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` must be deterministic. Relative error per element is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps near-zero entries
    from dominating. Returns ``{"errors": {name: err}, "skipped": [...],
    "passed": bool}``.
    """
    zero_grads(params)
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        clear_tape()
        raise GradientError("non-finite loss in gradient check")
    backward(loss)
    errors, skipped = {}, []
    for p in params:
        if p.frozen:
            skipped.append(p.name)
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise GradientError(f"non-finite loss while perturbing {p.name}")
                num_flat[i] = (up - down) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[p.name] = float((np.abs(analytic - numeric) / denom).max()) if p.data.size else 0.0
    return {
        "errors": errors,
        "skipped": skipped,
        "passed": all(e < tol for e in errors.values()),
        "max_error": max(errors.values(), default=0.0),
    }
