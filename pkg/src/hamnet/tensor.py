"""Float64 tensors with tape-based reverse-mode automatic differentiation.

Everything in this package differentiates through the primitives defined
here. Ground rules:

* all storage is contiguous float64; scalars are 0-d tensors;
* shapes must match exactly -- the only implicit broadcast anywhere is the
  row-vector bias addition in ``add_bias`` (and the explicit tiling ops);
  every other mismatch raises ShapeError;
* operations record themselves on the active ``Tape`` in execution order,
  which is already topological, and ``Tape.backward`` replays that record
  exactly once per node in reverse;
* with no tape active the same functions run forward-only, which is how
  evaluation and finite-difference probes avoid bookkeeping cost.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

Array = np.ndarray


class Tensor:
    """Dense float64 array plus an optional gradient buffer.

    Tensors produced by operations are treated as immutable; only leaf
    parameters are ever mutated in place (by the optimizer and by the
    finite-difference checker), and never while a tape is recording.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to (1,)
            arr = np.ascontiguousarray(arr)
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.data.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out: Tensor, backward: Callable[[Array], None]):
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    One tape at a time: nesting is a programming error. Operations executed
    while a tape is active append nodes in execution order; ``backward``
    walks the list once, in reverse, seeding the loss gradient with 1.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tracked parameter")
        loss._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.backward(g)


def _tracing(*tensors: Tensor) -> bool:
    return Tape._active is not None and any(t.requires_grad for t in tensors)


def _record(out: Tensor, backward: Callable[[Array], None]) -> None:
    assert Tape._active is not None
    Tape._active.nodes.append(_Node(out, backward))


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, requires_grad=_tracing(a, b))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        _record(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, requires_grad=_tracing(a, b))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)
        _record(out, backward)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            a._accumulate(-g)
        _record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product, shapes identical."""
    _require_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, requires_grad=_tracing(a, b))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)
        _record(out, backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain python scalar (not differentiated through c)."""
    c = float(c)
    out = Tensor(a.data * c, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            a._accumulate(g * c)
        _record(out, backward)
    return out


def smul(s: Tensor, a: Tensor) -> Tensor:
    """Multiply tensor ``a`` by a scalar *tensor* ``s`` (both differentiable)."""
    if s.data.shape != ():
        raise ShapeError(f"smul: first operand must be scalar, got shape {s.data.shape}")
    out = Tensor(a.data * s.data, requires_grad=_tracing(s, a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if s.requires_grad:
                s._accumulate(np.asarray((g * a.data).sum(), dtype=np.float64))
            if a.requires_grad:
                a._accumulate(g * float(s.data))
        _record(out, backward)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias addition: (m, n) + (n,). The one sanctioned broadcast."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.data.shape} and {b.data.shape}")
    out = Tensor(x.data + b.data[None, :], requires_grad=_tracing(x, b))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if x.requires_grad:
                x._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))
        _record(out, backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over 1-d/2-d operands with exact inner-dimension checks."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-d or 2-d, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {ad.shape} vs {bd.shape}")
    out = Tensor(ad @ bd, requires_grad=_tracing(a, b))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if ad.ndim == 2 and bd.ndim == 2:
                if a.requires_grad:
                    a._accumulate(g @ bd.T)
                if b.requires_grad:
                    b._accumulate(ad.T @ g)
            elif ad.ndim == 2 and bd.ndim == 1:
                if a.requires_grad:
                    a._accumulate(np.outer(g, bd))
                if b.requires_grad:
                    b._accumulate(ad.T @ g)
            elif ad.ndim == 1 and bd.ndim == 2:
                if a.requires_grad:
                    a._accumulate(bd @ g)
                if b.requires_grad:
                    b._accumulate(np.outer(ad, g))
            else:
                if a.requires_grad:
                    a._accumulate(g * bd)
                if b.requires_grad:
                    b._accumulate(g * ad)
        _record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            a._accumulate(g.T)
        _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=_tracing(a))
    if out.requires_grad:
        mask = (a.data > 0.0).astype(np.float64)
        def backward(g: Array) -> None:
            a._accumulate(g * mask)
        _record(out, backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), requires_grad=_tracing(a))
    if out.requires_grad:
        y = out.data
        def backward(g: Array) -> None:
            a._accumulate(g * (1.0 - y * y))
        _record(out, backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so neither exp overflows.
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, requires_grad=_tracing(a))
    if out.requires_grad:
        yd = out.data
        def backward(g: Array) -> None:
            a._accumulate(g * yd * (1.0 - yd))
        _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions and normalizations


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis of a 1-d or 2-d tensor.

    The row maximum is subtracted before exponentiation, so the result is
    invariant (to ~1e-16 per element) under adding a constant to a row.
    """
    x = a.data
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax_rows: expected 1-d or 2-d input, got shape {x.shape}")
    if x.size == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax_rows: empty distribution")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data, requires_grad=_tracing(a))
    if out.requires_grad:
        s = out.data
        def backward(g: Array) -> None:
            inner = (g * s).sum(axis=-1, keepdims=True)
            a._accumulate(s * (g - inner))
        _record(out, backward)
    return out


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    """Numerically stable log-sum-exp.

    1-d input with axis=None reduces to a scalar; 2-d input reduces along
    axis 0 or 1 to a vector.
    """
    x = a.data
    if x.ndim == 1 and axis is None:
        if x.size == 0:
            raise ShapeError("logsumexp: empty input")
        m = x.max()
        out_data = np.asarray(m + np.log(np.exp(x - m).sum()), dtype=np.float64)
    elif x.ndim == 2 and axis in (0, 1):
        if x.shape[axis] == 0:
            raise ShapeError("logsumexp: empty reduction axis")
        m = x.max(axis=axis, keepdims=True)
        out_data = (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).reshape(
            x.shape[1 - axis]
        )
    else:
        raise ShapeError(f"logsumexp: unsupported input shape {x.shape} with axis={axis}")
    out = Tensor(out_data, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            if x.ndim == 1:
                a._accumulate(np.exp(x - out.data) * g)
            elif axis == 0:
                a._accumulate(np.exp(x - out.data[None, :]) * g[None, :])
            else:
                a._accumulate(np.exp(x - out.data[:, None]) * g[:, None])
        _record(out, backward)
    return out


def layer_norm_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row of a 2-d tensor to zero mean and unit variance.

    No affine part here; compose with mul/add_bias for gain and shift.
    """
    x = a.data
    if x.ndim != 2:
        raise ShapeError(f"layer_norm_rows: expected 2-d input, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("layer_norm_rows: empty rows")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(xhat, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            gm = g.mean(axis=1, keepdims=True)
            gxm = (g * xhat).mean(axis=1, keepdims=True)
            a._accumulate((g - gm - xhat * gxm) * inv)
        _record(out, backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=np.float64), requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            a._accumulate(np.full_like(a.data, float(g)))
        _record(out, backward)
    return out


def mean_all(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("mean_all: empty tensor")
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# shape surgery


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.data.shape} as {shape}")
    out = Tensor(a.data.reshape(shape), requires_grad=_tracing(a))
    if out.requires_grad:
        orig = a.data.shape
        def backward(g: Array) -> None:
            a._accumulate(g.reshape(orig))
        _record(out, backward)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty part list")
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError("concat: mixed ranks")
        for ax in range(nd):
            if ax != axis and p.data.shape[ax] != parts[0].data.shape[ax]:
                raise ShapeError(
                    f"concat: shape mismatch off the concat axis, "
                    f"{p.data.shape} vs {parts[0].data.shape}"
                )
    if axis < 0 or axis >= nd:
        raise ShapeError(f"concat: axis {axis} out of range for rank {nd}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 requires_grad=_tracing(*parts))
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def backward(g: Array) -> None:
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = tuple(slice(None) if ax != axis else slice(lo, hi)
                                for ax in range(nd))
                    p._accumulate(g[idx])
        _record(out, backward)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_rows: expected 2-d input, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice_rows: range [{start}, {stop}) out of bounds "
                         f"for {a.data.shape[0]} rows")
    out = Tensor(a.data[start:stop], requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a._accumulate(full)
        _record(out, backward)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols: expected 2-d input, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: range [{start}, {stop}) out of bounds "
                         f"for {a.data.shape[1]} columns")
    out = Tensor(a.data[:, start:stop], requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accumulate(full)
        _record(out, backward)
    return out


def take_row(a: Tensor, i: int) -> Tensor:
    """Extract row i of a 2-d tensor as a 1-d tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row: expected 2-d input, got shape {a.data.shape}")
    if not (0 <= i < a.data.shape[0]):
        raise ShapeError(f"take_row: row {i} out of bounds for {a.data.shape[0]} rows")
    out = Tensor(a.data[i], requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            full = np.zeros_like(a.data)
            full[i] = g
            a._accumulate(full)
        _record(out, backward)
    return out


def tile_rows(v: Tensor, m: int) -> Tensor:
    """Stack m copies of a vector as rows: (n,) -> (m, n)."""
    if v.data.ndim != 1:
        raise ShapeError(f"tile_rows: expected 1-d input, got shape {v.data.shape}")
    if m < 0:
        raise ShapeError("tile_rows: negative row count")
    out = Tensor(np.tile(v.data, (m, 1)), requires_grad=_tracing(v))
    if out.requires_grad:
        def backward(g: Array) -> None:
            v._accumulate(g.sum(axis=0))
        _record(out, backward)
    return out


def tile_cols(v: Tensor, n: int) -> Tensor:
    """Spread a vector across columns: (m,) -> (m, n) with constant rows."""
    if v.data.ndim != 1:
        raise ShapeError(f"tile_cols: expected 1-d input, got shape {v.data.shape}")
    if n < 0:
        raise ShapeError("tile_cols: negative column count")
    out = Tensor(np.repeat(v.data[:, None], n, axis=1), requires_grad=_tracing(v))
    if out.requires_grad:
        def backward(g: Array) -> None:
            v._accumulate(g.sum(axis=1))
        _record(out, backward)
    return out


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding): table (V, d), int ids (n,) -> (n, d).

    Backward scatter-adds, so repeated ids accumulate correctly.
    """
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-d, got shape {table.data.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: ids must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(
            f"gather_rows: id out of range for table with {table.data.shape[0]} rows"
        )
    out = Tensor(table.data[idx], requires_grad=_tracing(table))
    if out.requires_grad:
        def backward(g: Array) -> None:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table._accumulate(full)
        _record(out, backward)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. rate == 0 is the identity; rate must sit in [0, 1)."""
    if not (0.0 <= rate < 1.0):
        raise ShapeError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = Tensor(a.data * mask, requires_grad=_tracing(a))
    if out.requires_grad:
        def backward(g: Array) -> None:
            a._accumulate(g * mask)
        _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def check_gradients(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-5,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar.
    Each parameter is perturbed coordinate-wise (all coordinates, or
    ``samples_per_param`` of them drawn without replacement). Returns the
    worst relative error  |analytic - numeric| / max(1, |analytic|, |numeric|).

    Raises NumericalError if any evaluation is non-finite, naming the
    parameter block being perturbed at the time.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        out = f()
    if out.data.shape != ():
        raise ShapeError(f"check_gradients: objective must be scalar, got {out.data.shape}")
    if not np.isfinite(out.data):
        raise NumericalError("check_gradients: objective is non-finite at the base point")
    tape.backward(out)

    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        flat = p.data.reshape(-1)
        gflat = analytic[name].reshape(-1)
        if samples_per_param is None or samples_per_param >= flat.size:
            coords: Iterable[int] = range(flat.size)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=samples_per_param, replace=False)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = float(f().data)
            flat[i] = saved - epsilon
            f_minus = float(f().data)
            flat[i] = saved
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(
                    f"check_gradients: non-finite objective while perturbing "
                    f"parameter '{name}' coordinate {int(i)}"
                )
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = gflat[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
