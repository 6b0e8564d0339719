"""Dense tensors with reverse-mode automatic differentiation.

Forward operations executed inside a `Tape` context are recorded in order;
`backward(loss)` replays the records strictly in reverse, accumulating
gradients into every reachable leaf with `requires_grad=True`. A tape can be
consumed exactly once -- a second backward raises instead of silently
double-counting, which would otherwise be an easy bug to hit in the
k-step discriminator loop.

Tensors are treated as immutable once recorded; parameter updates happen
between tapes by mutating `.data` of leaves directly (see `grad.optim`).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import TapeError

DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Single-precision mode is opt-in; float64 keeps gradient checks tight."""
    global DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    DEFAULT_DTYPE = dtype.type


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, severed from any tape. Gradient never crosses this."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.is_leaf = True
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the actual derivatives live in grad.ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a recorded op; "
                            "multiply by a reciprocal instead")
        return ops.mul(self, 1.0 / other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class _Record:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tape:
    """Ordered operation log; context manager makes it the active tape."""

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, tape=self)


class _NoGrad:
    """Sentinel pushed onto the stack to suppress recording."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is None


_TAPE_STACK: list[Optional[Tape]] = []


def no_grad() -> _NoGrad:
    return _NoGrad()


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; register it on the active tape when grads are live.

    `backward_fn(gout) -> tuple[Optional[np.ndarray], ...]` must return one
    gradient (or None) per input, in order.
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out.requires_grad = bool(needs)
    out.is_leaf = not needs
    if needs:
        tape._records.append(_Record(out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate `.grad` on every requires_grad leaf reachable from `loss`."""
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise TapeError("backward called with no tape")
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward")
    if loss.data.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        gout = grads.pop(id(rec.out), None)
        if gout is None:
            continue
        gins = rec.backward_fn(gout)
        for t, g in zip(rec.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            if not np.issubdtype(np.asarray(g).dtype, np.floating):
                g = np.asarray(g, dtype=t.data.dtype)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            elif t.is_leaf:
                grads[key] = np.array(g, copy=True) if g.base is not None else g
            else:
                grads[key] = g
        # Leaves keep their gradients; intermediates are transient.
        for t in rec.inputs:
            if t.is_leaf and t.requires_grad and id(t) in grads:
                g = grads[id(t)]
                t.grad = g if t.grad is None else t.grad + g
                del grads[id(t)]
    if loss.is_leaf and loss.requires_grad:
        # Degenerate case: backward on a raw leaf.
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
