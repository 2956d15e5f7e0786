"""Reverse-mode differentiable tensors on top of numpy arrays.

Design:

* A :class:`Tensor` wraps a C-contiguous float32/float64 numpy array.  Ops
  build an implicit tape: each result remembers its parent tensors and a
  closure that maps the output gradient to parent gradients.
* :func:`backward` walks the tape in reverse topological order and
  accumulates gradients into leaf tensors that require them (parameters).
* Gradients for frozen parameters are never materialized; a subtree whose
  inputs are all constant records no tape at all, so frozen-branch forwards
  cost no memory beyond their outputs.
* Everything is single-threaded and deterministic: identical inputs produce
  bit-identical outputs, gradients, and optimizer updates.

Shapes follow the channels-first convention: feature maps are ``(C, H, W)``
or batched ``(N, C, H, W)``.  Elementwise ops require exactly equal shapes;
there is deliberately no broadcasting.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ContractError, NumericsError

_FLOAT_DTYPES = (np.float32, np.float64)

# Module-level mode switches.  The execution model is single-threaded per
# model instance, so plain globals are sufficient.
_grad_enabled = True
_finite_checks = True
_kink_trace: list | None = None


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the context (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    """Override the per-op NaN/Inf guard (on by default)."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = prev


@contextmanager
def record_kinks(sink: list):
    """Collect the sign patterns of every non-smooth op evaluated inside.

    Each relu/clamp forward appends a boolean mask to ``sink``.  The
    finite-difference checker compares the patterns of its two probe
    evaluations; a mismatch means the probe stepped across a kink and the
    numeric estimate is invalid for that entry.
    """
    global _kink_trace
    prev = _kink_trace
    _kink_trace = sink
    try:
        yield sink
    finally:
        _kink_trace = prev


def _guard_finite(arr: np.ndarray, what: str) -> None:
    if _finite_checks and not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by {what}")


def _as_float_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """A node in the computation graph.

    Leaves are created directly; interior nodes are created by ops.  ``grad``
    is populated by :func:`backward` only on leaves with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        _guard_finite(self.data, "tensor creation")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward_fn, what: str) -> "Tensor":
        data = np.asarray(data)
        _guard_finite(data, what)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward_fn = None
        if _grad_enabled and any(p.requires_grad or p._backward_fn is not None for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class Parameter(Tensor):
    """A named, trainable leaf tensor.

    ``frozen=True`` removes the parameter from gradient accumulation and
    optimizer updates; its stored values can then only change by explicit
    assignment (e.g. checkpoint loading).
    """

    __slots__ = ("name",)

    def __init__(self, name: str, value, dtype=None, frozen: bool = False):
        super().__init__(value, requires_grad=not frozen, dtype=dtype)
        self.name = str(name)

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.requires_grad = not bool(value)
        if value:
            self.grad = None  # frozen parameters discard their gradients

    def __repr__(self):
        state = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.data.shape}, {state})"


class ParameterStore:
    """Ordered collection of named parameters for one model instance."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ContractError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise ContractError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if not p.frozen]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def freeze(self, prefix: str = "") -> None:
        for p in self._params.values():
            if p.name.startswith(prefix):
                p.frozen = True

    def namespace_bytes(self, prefix: str = "") -> bytes:
        """Concatenated raw bytes of every parameter under ``prefix``.

        Name-sorted, so the result identifies parameter values independent of
        insertion order.  Used for bitwise freeze assertions and digests.
        """
        chunks = []
        for name in sorted(self._params):
            if name.startswith(prefix):
                p = self._params[name]
                chunks.append(name.encode("utf-8"))
                chunks.append(np.ascontiguousarray(p.data).tobytes())
        return b"".join(chunks)

    def element_count(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self._params.items() if n.startswith(prefix))


def backward(loss: Tensor) -> None:
    """Reverse-mode differentiation from a scalar loss node.

    Populates ``.grad`` (accumulating) on every reachable non-frozen
    parameter.  Raises :class:`ContractError` if ``loss`` is not scalar or
    carries no recorded forward tape.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._backward_fn is None:
        raise ContractError("backward() called without a recorded forward pass")

    # Iterative post-order topological sort; the graph of an unrolled
    # multi-iteration forward is far deeper than the Python recursion limit.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent._backward_fn is not None:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        grad_out = grads.pop(id(node), None)
        if grad_out is None or node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(grad_out)
        for parent, g in zip(node._parents, parent_grads):
            if g is None:
                continue
            if parent._backward_fn is not None:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
            elif parent.requires_grad:
                if parent.grad is None:
                    parent.grad = np.array(g, copy=True)
                else:
                    parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ContractError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add_elementwise")

    def bwd(g):
        return g, g

    return Tensor._from_op(a.data + b.data, (a, b), bwd, "add_elementwise")


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul_elementwise")

    def bwd(g):
        return g * b.data, g * a.data

    return Tensor._from_op(a.data * b.data, (a, b), bwd, "mul_elementwise")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.data.dtype.type(factor)

    def bwd(g):
        return (g * factor,)

    return Tensor._from_op(x.data * factor, (x,), bwd, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _kink_trace is not None:
        _kink_trace.append(mask)

    def bwd(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, x.data.dtype.type(0)), (x,), bwd, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function with output clipped into the open interval (0, 1).

    The clip keeps the strict-range invariant of downstream soft masks even
    where the float type would saturate to exactly 0.0 or 1.0.
    """
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    lo = np.nextafter(d.dtype.type(0), d.dtype.type(1))
    hi = np.nextafter(d.dtype.type(1), d.dtype.type(0))
    np.clip(out, lo, hi, out=out)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), bwd, "sigmoid")


def concat_channels(xs) -> Tensor:
    """Concatenate along the channel axis (axis -3 of (N,)C,H,W tensors)."""
    xs = list(xs)
    if not xs:
        raise ContractError("concat_channels: need at least one input")
    first = xs[0]
    for x in xs[1:]:
        if x.data.ndim != first.data.ndim:
            raise ContractError("concat_channels: rank mismatch")
        if x.data.shape[:-3] != first.data.shape[:-3] or x.data.shape[-2:] != first.data.shape[-2:]:
            raise ContractError(
                f"concat_channels: incompatible shapes {first.data.shape} vs {x.data.shape}"
            )
        if x.data.dtype != first.data.dtype:
            raise ContractError("concat_channels: dtype mismatch")
    if first.data.ndim < 3:
        raise ContractError("concat_channels: inputs must be at least 3-d (C, H, W)")
    sizes = [x.data.shape[-3] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(g[..., bounds[i] : bounds[i + 1], :, :]) for i in range(len(xs))
        )

    return Tensor._from_op(
        np.concatenate([x.data for x in xs], axis=-3), tuple(xs), bwd, "concat_channels"
    )


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.data.shape[-3]
    if x.data.ndim < 3 or not (0 <= start < stop <= c):
        raise ContractError(f"slice_channels: invalid range [{start}, {stop}) for C={c}")

    def bwd(g):
        full = np.zeros_like(x.data)
        full[..., start:stop, :, :] = g
        return (full,)

    return Tensor._from_op(
        np.ascontiguousarray(x.data[..., start:stop, :, :]), (x,), bwd, "slice_channels"
    )


def channel_mean(x: Tensor) -> Tensor:
    """Arithmetic mean over the channel axis, keeping a singleton channel."""
    if x.data.ndim < 3:
        raise ContractError("channel_mean: input must be at least 3-d (C, H, W)")
    c = x.data.shape[-3]
    inv = x.data.dtype.type(1.0 / c)

    def bwd(g):
        return (np.broadcast_to(g * inv, x.data.shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=-3, keepdims=True), (x,), bwd, "channel_mean")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi] with pass-through gradient strictly inside."""
    if not lo < hi:
        raise ContractError("clamp: lo must be < hi")
    mask = (x.data > lo) & (x.data < hi)
    if _kink_trace is not None:
        _kink_trace.append(mask)

    def bwd(g):
        return (g * mask,)

    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), bwd, "clamp")


def detach(x: Tensor) -> Tensor:
    """A constant view of ``x``: same values, no tape connection."""
    return Tensor(x.data)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all elements (scalar output).

    The reduction is the mean, so the loss scale is independent of image
    resolution and batch size.
    """
    _check_same_shape(pred, target, "l1_loss")
    diff = pred.data - target.data
    n = pred.data.dtype.type(diff.size)

    def bwd(g):
        s = (g / n) * np.sign(diff)
        return s, -s

    return Tensor._from_op(
        np.abs(diff).mean(dtype=pred.data.dtype), (pred, target), bwd, "l1_loss"
    )
