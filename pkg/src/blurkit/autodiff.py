"""Dense tensors, an explicit gradient tape, and a finite-difference oracle.

Design notes
------------
* ``Tensor`` is a thin wrapper around a C-order float32/float64 ndarray.
  float32 is the training mode; float64 is the verification mode used by all
  gradient checks.
* Ops (see :mod:`blurkit.ops`) are pure functions. When handed a ``Tape`` they
  append one entry per executed op; ``backward`` walks entries in exact
  reverse execution order. Replaying a tape re-runs every recorded forward
  closure and demands bit-identical outputs.
* Summation order inside every op is fixed (row-major reductions, tap-major
  kernel loops), so repeated runs on the same machine are bit-identical.
* Constructing a ``Tensor`` from user data validates finiteness; ops that can
  produce NaN/Inf from finite inputs (normalizations, losses) re-check and
  raise instead of letting non-finite values escape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense n-dimensional real array; the value carrier for every op."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains non-finite values")
        self.data = np.ascontiguousarray(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for op outputs; skips validation.
        t = cls.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(np.ascontiguousarray(self.data.astype(dtype)))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=dtype))


class ReplayMismatchError(RuntimeError):
    """A replayed tape entry produced an output different from the recording."""


class _Entry:
    __slots__ = ("out", "inputs", "forward", "backward")

    def __init__(self, out, inputs, forward, backward):
        self.out = out
        self.inputs = inputs
        self.forward = forward
        self.backward = backward


class Tape:
    """Ordered record of executed ops plus a named-parameter registry."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self.params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def register(self, name: str, param: Tensor) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        self.params[name] = param
        return param

    def register_all(self, params: Mapping[str, Tensor]) -> None:
        for name, p in params.items():
            self.register(name, p)

    def record(
        self,
        out: Tensor,
        inputs: Iterable[Tensor],
        forward: Callable[..., np.ndarray],
        backward: Callable[[np.ndarray], tuple],
    ) -> None:
        self.entries.append(_Entry(out, tuple(inputs), forward, backward))

    def replay(self) -> None:
        """Re-run every recorded forward and verify bit-exact reproduction."""
        for i, e in enumerate(self.entries):
            ref = e.forward(*(inp.data for inp in e.inputs))
            if not np.array_equal(ref, e.out.data):
                raise ReplayMismatchError(f"tape entry {i} did not reproduce its output")


def backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """d(loss)/d(param) for every registered parameter, in reverse tape order.

    Parameters unreachable from the loss receive zero gradients of matching
    shape. Gradient accumulation for shared inputs happens in reverse
    execution order, which is deterministic.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for e in reversed(tape.entries):
        g = grads.pop(id(e.out), None)
        if g is None:
            continue
        in_grads = e.backward(g)
        for inp, gi in zip(e.inputs, in_grads):
            if gi is None:
                continue
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = gi
            else:
                acc += gi
    return {
        name: Tensor._wrap(grads.get(id(p), np.zeros_like(p.data)))
        for name, p in tape.params.items()
    }


def fd_gradient(f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central finite differences of a scalar function, one element at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _as_float(f(x))
        flat[i] = orig - eps
        fm = _as_float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return Tensor._wrap(g)


def _as_float(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


def max_relative_error(analytic: Tensor | np.ndarray, numeric: Tensor | np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, 1); the gradcheck error measure."""
    a = analytic.data if isinstance(analytic, Tensor) else np.asarray(analytic)
    n = numeric.data if isinstance(numeric, Tensor) else np.asarray(numeric)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
