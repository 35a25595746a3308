"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive operation applied to :class:`Tensor`
values created under it; :func:`gradient` replays the record backward once, in
reverse order, accumulating adjoints. The primitive set is deliberately small
and fixed: matmul, add, elementwise mul, tanh, sigmoid, softmax, concat,
embedding lookup, plus the four scalar helpers needed to express a negative
log-likelihood (pick, log, sumall, scale). Model code may not do math outside
these primitives, which keeps the backward pass auditable.

Shapes are restricted to what the translation model needs: vectors, matrices,
matrix-vector products and vector-scalar scaling. There is no general
broadcasting, no views, no in-place mutation of recorded tensors.

Every op validates that its output is finite; NaN or Inf anywhere is an error
state, raised immediately rather than propagated silently.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class AutodiffError(Exception):
    """Base class for tape and gradient errors."""


class NonFiniteError(AutodiffError):
    """An operation produced (or received) NaN or Inf."""


_STACK = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STACK, "tapes", None)
    if stack is None:
        stack = []
        _STACK.tapes = stack
    return stack


def active_tape() -> "Tape":
    stack = _tape_stack()
    if not stack:
        raise AutodiffError("no active Tape; wrap computation in 'with Tape():'")
    return stack[-1]


class Tensor:
    """A dense array bound to the tape that produced it."""

    __slots__ = ("data", "tape")

    def __init__(self, data: np.ndarray, tape: "Tape"):
        self.data = data
        self.tape = tape

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitives; context manager confines it to one thread.

    ``grad=False`` runs the same forward math without recording, for decode
    paths that never need a backward pass. ``dtype`` fixes the working
    precision; 64-bit is the default and the only mode gradient checks run in.
    """

    def __init__(self, dtype=np.float64, grad: bool = True):
        self.dtype = np.dtype(dtype)
        self.grad = grad
        self._ops: list[_Op] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def tensor(self, values) -> Tensor:
        """Create a leaf tensor (model parameter or input) on this tape."""
        arr = np.asarray(values, dtype=self.dtype)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("leaf tensor contains non-finite values")
        return Tensor(arr, self)

    def _emit(self, out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError("operation produced non-finite values")
        out = Tensor(out_data, self)
        if self.grad:
            self._ops.append(_Op(out, inputs, backward))
        return out

    def __len__(self) -> int:
        return len(self._ops)


def _accumulate(grads: dict, t: Tensor, g: np.ndarray) -> None:
    # Always copy on first store: backward closures may hand the same array to
    # several inputs (add, concat), and stored adjoints are mutated in place.
    key = id(t)
    have = grads.get(key)
    if have is None:
        grads[key] = np.array(g)
    else:
        have += g


def gradient(loss: Tensor, params) -> list[np.ndarray]:
    """Adjoints of a scalar loss with respect to each tensor in ``params``.

    Parameters never touched by the loss get zero gradients. Raises if the
    loss is not a scalar produced on a recording tape.
    """
    tape = loss.tape
    if not tape.grad:
        raise AutodiffError("loss was computed on a non-recording tape")
    if loss.data.shape != ():
        raise AutodiffError("gradient target must be a scalar")
    param_list = list(params)
    if not any(op.out is loss for op in tape._ops):
        connected = any(loss is p for p in param_list)
        if not connected:
            raise AutodiffError("loss is not connected to this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=tape.dtype)}
    for op in reversed(tape._ops):
        g = grads.pop(id(op.out), None)
        if g is None:
            continue
        op.backward(g, grads)
    out = []
    for p in param_list:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix @ vector or matrix @ matrix."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise AutodiffError(f"matmul shapes unsupported: {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    if b.data.ndim == 1:
        def backward(g, grads):
            _accumulate(grads, a, np.outer(g, b.data))
            _accumulate(grads, b, a.data.T @ g)
    else:
        def backward(g, grads):
            _accumulate(grads, a, g @ b.data.T)
            _accumulate(grads, b, a.data.T @ g)

    return a.tape._emit(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"add shape mismatch: {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def backward(g, grads):
        _accumulate(grads, a, g)
        _accumulate(grads, b, g)

    return a.tape._emit(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one side may be a scalar (vector-scalar broadcast)."""
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise AutodiffError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out_data = a.data * b.data

    def backward(g, grads):
        ga = g * b.data
        gb = g * a.data
        if a.data.shape == () and ga.shape != ():
            ga = np.asarray(ga.sum())
        if b.data.shape == () and gb.shape != ():
            gb = np.asarray(gb.sum())
        _accumulate(grads, a, ga)
        _accumulate(grads, b, gb)

    return a.tape._emit(out_data, (a, b), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g, grads):
        _accumulate(grads, x, g * (1.0 - out_data * out_data))

    return x.tape._emit(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows; the two branches cover both signs.
    t = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def backward(g, grads):
        _accumulate(grads, x, g * out_data * (1.0 - out_data))

    return x.tape._emit(out_data, (x,), backward)


def softmax(v: Tensor) -> Tensor:
    """Probability vector via max-subtracted exponentiation."""
    if v.data.ndim != 1 or v.data.size == 0:
        raise AutodiffError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteError("softmax input is non-finite")
    shifted = v.data - np.max(v.data)
    e = np.exp(shifted)
    out_data = e / e.sum()

    def backward(g, grads):
        dot = float(out_data @ g)
        _accumulate(grads, v, out_data * (g - dot))

    return v.tape._emit(out_data, (v,), backward)


def concat(parts: list[Tensor]) -> Tensor:
    """Join vectors (or scalars, treated as length-1) into one vector."""
    if not parts or any(p.data.ndim > 1 for p in parts):
        raise AutodiffError("concat expects a non-empty list of vectors or scalars")
    out_data = np.concatenate([np.atleast_1d(p.data) for p in parts])
    sizes = [p.data.size for p in parts]

    def backward(g, grads):
        offset = 0
        for p, n in zip(parts, sizes):
            piece = g[offset:offset + n]
            if p.data.shape == ():
                piece = np.asarray(piece[0])
            _accumulate(grads, p, piece)
            offset += n

    tape = parts[0].tape
    return tape._emit(out_data, tuple(parts), backward)


def embedding(table: Tensor, index: int) -> Tensor:
    """Row lookup; backward scatter-adds into the table's row."""
    if table.data.ndim != 2:
        raise AutodiffError("embedding table must be a matrix")
    n = table.data.shape[0]
    if not (0 <= index < n):
        raise AutodiffError(f"embedding index {index} out of range [0, {n})")
    out_data = table.data[index].copy()

    def backward(g, grads):
        key = id(table)
        have = grads.get(key)
        if have is None:
            have = np.zeros_like(table.data)
            grads[key] = have
        have[index] += g

    return table.tape._emit(out_data, (table,), backward)


def pick(v: Tensor, index: int) -> Tensor:
    """Scalar selection of one vector entry."""
    if v.data.ndim != 1:
        raise AutodiffError("pick expects a vector")
    if not (0 <= index < v.data.size):
        raise AutodiffError(f"pick index {index} out of range")
    out_data = np.asarray(v.data[index])

    def backward(g, grads):
        key = id(v)
        have = grads.get(key)
        if have is None:
            have = np.zeros_like(v.data)
            grads[key] = have
        have[index] += g

    return v.tape._emit(out_data, (v,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise AutodiffError("log expects strictly positive input")
    out_data = np.log(x.data)

    def backward(g, grads):
        _accumulate(grads, x, g / x.data)

    return x.tape._emit(out_data, (x,), backward)


def sumall(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(g, grads):
        _accumulate(grads, x, np.full_like(x.data, float(g)))

    return x.tape._emit(out_data, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant (not differentiated through)."""
    c = float(c)
    out_data = x.data * c

    def backward(g, grads):
        _accumulate(grads, x, g * c)

    return x.tape._emit(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    """Per-tensor max relative error between analytic and numeric gradients."""

    tolerance: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)


def finite_difference_check(loss_fn, params: dict, analytic: dict,
                            step: float = 1e-5,
                            tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must recompute the scalar loss from the live arrays in
    ``params`` (name -> ndarray, float64); entries are perturbed in place and
    restored. ``analytic`` maps the same names to gradient arrays. Entries
    whose combined magnitude is below an absolute floor are compared
    absolutely, since a relative error against ~0 is noise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    report = GradCheckReport(tolerance=tolerance)
    floor = 1e-6
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise AutodiffError("finite_difference_check requires float64 params")
        grad = analytic[name]
        worst = 0.0
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn())
            flat[i] = keep - step
            down = float(loss_fn())
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            a = float(gflat[i])
            denom = max(abs(a), abs(numeric))
            if denom < floor:
                err = abs(a - numeric)
            else:
                err = abs(a - numeric) / denom
            if err > worst:
                worst = err
        report.max_rel_err[name] = worst
        if worst > tolerance:
            report.failures.append(name)
    return report
