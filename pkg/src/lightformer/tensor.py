"""Dense NCHW-style tensors and a reverse-mode tape.

A Tensor is a thin wrapper over a contiguous numpy array (float32 for
compute, float64 for verification) of rank 0..5. Operators in
:mod:`lightformer.ops` push one node per call onto the innermost active
Tape; ``Tape.backward`` replays the nodes in reverse, accumulating
adjoints with ``+=`` at fan-in points in a fixed order, so gradients are
deterministic and each node is visited exactly once.

Typical use::

    with Tape() as tape:
        loss = ...            # scalar Tensor built from ops
    grads = tape.backward(loss)
    g_w = grads[w]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

MAX_RANK = 5

_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """A shape or dtype precondition failed; the message names the offending dim."""


class TapeError(RuntimeError):
    """Backward-pass contract violation (non-scalar loss, missing adjoint, ...)."""


class Tensor:
    """Dense numeric array of rank <= 5 with an autodiff participation flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        # ascontiguousarray would promote rank-0 to shape (1,); keep scalars scalar.
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array (not a copy; treat as read-only)."""
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    # Arithmetic dunders are attached by lightformer.ops at import time to
    # avoid a circular import; see the bottom of that module.


def tensor(data, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def zeros(shape: Sequence[int], dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape: Sequence[int], dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def full(shape: Sequence[int], value: float, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered op records; append order is execution order, hence topological."""

    def __init__(self):
        self._nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must unwind in LIFO order"

    @property
    def nodes(self) -> tuple:
        return tuple(self._nodes)

    def record(
        self,
        op: str,
        inputs: Iterable[Tensor],
        output: Tensor,
        backward: "Callable[[np.ndarray], tuple] | None",
    ) -> None:
        """Append one node. ``backward`` maps d(out) to a grad per input (None allowed)."""
        self._nodes.append(TapeNode(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> "Grads":
        """Reverse sweep from a scalar ``loss``; returns adjoints keyed by tensor."""
        if not isinstance(loss, Tensor):
            raise TapeError("backward expects the loss as a Tensor")
        if loss.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            if node.backward is None:
                raise TapeError(f"op '{node.op}' has no adjoint registered")
            g_inputs = node.backward(g_out)
            for inp, g in zip(node.inputs, g_inputs):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                # Reassign instead of in-place += : adjoints may be views into
                # other stored buffers (reshape/permute backwards).
                grads[key] = g if prev is None else prev + g
        return Grads(grads, self._nodes, loss)


class Grads:
    """Adjoint lookup by tensor identity, as produced by ``Tape.backward``."""

    def __init__(self, table: dict, nodes: list, loss: Tensor):
        self._table = table
        # Keep the graph tensors alive so id() keys cannot be recycled.
        self._nodes = nodes
        self._loss = loss

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._table

    def __getitem__(self, t: Tensor) -> np.ndarray:
        try:
            return self._table[id(t)]
        except KeyError:
            raise KeyError(f"no gradient recorded for {t!r}") from None

    def get(self, t: Tensor, default=None):
        return self._table.get(id(t), default)
