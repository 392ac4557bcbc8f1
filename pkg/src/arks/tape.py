"""Recorded scalar computations with reverse-mode gradients.

A ``Tape`` records a DAG of primitive operations over named leaves, then
evaluates to a scalar (``forward``) and differentiates with respect to any
subset of leaves (``backward``).  Tensors are C-order float64 numpy arrays;
scalars are 0-d.  Shapes are fixed at build time, so a sealed tape can be
re-evaluated cheaply with fresh bindings.

Supported broadcasting is scalar-with-tensor for ``add`` and ``mul`` only;
any other shape mismatch is a build-time error.

A sealed tape owns preallocated value/gradient buffers, so evaluating the
same tape from two threads at once is not supported; evaluate disjoint
tapes in parallel instead.
"""

from __future__ import annotations

import os

import numpy as np

from . import _tape_py
from ._ops import (
    OP_ADD,
    OP_CONST,
    OP_ELU,
    OP_EXP,
    OP_L1NORM,
    OP_LEAF,
    OP_LOG,
    OP_MATMUL,
    OP_MEAN,
    OP_MUL,
    OP_NAMES,
    OP_NEG,
    OP_RELU,
    OP_SCALE,
    OP_SQNORM,
    OP_SUM,
    OP_XENT,
)
from .errors import DomainError, NumericalError, ShapeMismatch

if os.environ.get("ARKS_PURE_PYTHON") == "1":
    _impl = _tape_py
else:
    try:
        from . import _tape_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _tape_py


def backend_name() -> str:
    """Name of the active evaluator backend: 'cython' or 'python'."""
    return _impl.NAME


def as_tensor(x, shape=None) -> np.ndarray:
    """Coerce ``x`` to a C-order float64 array, optionally checking shape."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeMismatch(f"expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def _scalar(shape) -> bool:
    return shape == ()


class Tape:
    """Builder and evaluator for one recorded scalar computation."""

    def __init__(self):
        self._ops: list[tuple[int, int, int, int, float]] = []
        self._shapes: list[tuple[int, ...]] = []
        self._leaf_ids: dict[str, int] = {}
        self._const_vals: dict[int, np.ndarray] = {}
        self._out = -1
        self._sealed = False
        self._masks: dict[frozenset, np.ndarray] = {}

    # -- construction -------------------------------------------------

    def _push(self, op, ia, ib, iaux, faux, shape) -> int:
        if self._sealed:
            raise RuntimeError("tape is sealed; build a new tape instead")
        self._ops.append((op, ia, ib, iaux, faux))
        self._shapes.append(tuple(shape))
        return len(self._ops) - 1

    def _shape(self, ref: int) -> tuple[int, ...]:
        return self._shapes[ref]

    def leaf(self, name: str, shape) -> int:
        """Declare a named leaf (input or parameter) of the given shape."""
        if name in self._leaf_ids:
            raise ValueError(f"duplicate leaf name {name!r}")
        if isinstance(shape, int):
            shape = (shape,)
        ref = self._push(OP_LEAF, -1, -1, -1, 0.0, shape)
        self._leaf_ids[name] = ref
        return ref

    def const(self, value) -> int:
        """Embed a constant tensor (or scalar) into the tape."""
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel()
        shape = () if np.ndim(value) == 0 else np.asarray(value).shape
        ref = self._push(OP_CONST, -1, -1, -1, 0.0, shape)
        self._const_vals[ref] = arr
        return ref

    def _binary_broadcast(self, op, a, b) -> int:
        sa, sb = self._shape(a), self._shape(b)
        if sa == sb:
            out = sa
        elif _scalar(sa):
            out = sb
        elif _scalar(sb):
            out = sa
        else:
            raise ShapeMismatch(
                f"{OP_NAMES[op]}: shapes {sa} and {sb} (only scalar-with-tensor"
                " broadcasting is supported)"
            )
        return self._push(op, a, b, -1, 0.0, out)

    def add(self, a: int, b: int) -> int:
        return self._binary_broadcast(OP_ADD, a, b)

    def mul(self, a: int, b: int) -> int:
        return self._binary_broadcast(OP_MUL, a, b)

    def sub(self, a: int, b: int) -> int:
        """Sugar for add(a, neg(b))."""
        return self.add(a, self.neg(b))

    def matmul(self, a: int, b: int) -> int:
        sa, sb = self._shape(a), self._shape(b)
        if len(sa) != 2:
            raise ShapeMismatch(f"matmul: left operand must be 2-d, got {sa}")
        m, k = sa
        if sb == (k,):
            return self._push(OP_MATMUL, a, b, -1, 0.0, (m,))
        if len(sb) == 2 and sb[0] == k:
            return self._push(OP_MATMUL, a, b, -1, 0.0, (m, sb[1]))
        raise ShapeMismatch(f"matmul: inner dimensions {sa} @ {sb} do not agree")

    def _unary(self, op, a) -> int:
        return self._push(op, a, -1, -1, 0.0, self._shape(a))

    def exp(self, a: int) -> int:
        return self._unary(OP_EXP, a)

    def log(self, a: int) -> int:
        return self._unary(OP_LOG, a)

    def neg(self, a: int) -> int:
        return self._unary(OP_NEG, a)

    def elu(self, a: int) -> int:
        return self._unary(OP_ELU, a)

    def relu(self, a: int) -> int:
        return self._unary(OP_RELU, a)

    def scale(self, a: int, alpha: float) -> int:
        return self._push(OP_SCALE, a, -1, -1, float(alpha), self._shape(a))

    def sum(self, a: int) -> int:
        return self._push(OP_SUM, a, -1, -1, 0.0, ())

    def mean(self, a: int) -> int:
        return self._push(OP_MEAN, a, -1, -1, 0.0, ())

    def sqnorm(self, a: int) -> int:
        return self._push(OP_SQNORM, a, -1, -1, 0.0, ())

    def l1norm(self, a: int) -> int:
        return self._push(OP_L1NORM, a, -1, -1, 0.0, ())

    def softmax_xent(self, logits: int, label: int) -> int:
        shape = self._shape(logits)
        if len(shape) != 1:
            raise ShapeMismatch(f"softmax-cross-entropy needs a 1-d logits vector, got {shape}")
        if not 0 <= label < shape[0]:
            raise ValueError(f"class index {label} out of range for {shape[0]} logits")
        return self._push(OP_XENT, logits, -1, int(label), 0.0, ())

    def seal(self, out: int) -> "Tape":
        """Freeze the tape with ``out`` as its scalar output node."""
        if not _scalar(self._shape(out)):
            raise ShapeMismatch(f"output must be scalar, got shape {self._shape(out)}")
        n = len(self._ops)
        self._out = out
        rows = np.asarray(self._ops, dtype=np.float64).reshape(n, 5)
        self._p_ops = np.ascontiguousarray(rows[:, 0], dtype=np.int32)
        self._p_ia = np.ascontiguousarray(rows[:, 1], dtype=np.int32)
        self._p_ib = np.ascontiguousarray(rows[:, 2], dtype=np.int32)
        self._p_iaux = np.ascontiguousarray(rows[:, 3], dtype=np.int32)
        self._p_faux = np.ascontiguousarray(rows[:, 4], dtype=np.float64)
        mm = np.zeros((n, 3), dtype=np.int32)
        for i, (op, ia, _ib, _x, _f) in enumerate(self._ops):
            if op == OP_MATMUL:
                sa = self._shapes[ia]
                sb = self._shapes[self._ops[i][2]]
                mm[i, 0], mm[i, 1] = sa
                mm[i, 2] = sb[1] if len(sb) == 2 else 0
        self._p_mm = np.ascontiguousarray(mm)
        # all node buffers live in two flat arrays (values / gradients);
        # the per-node lists below are views into them, so the python
        # backend and the offset-addressed compiled backend share storage
        sizes = [max(1, int(np.prod(s))) for s in self._shapes]
        offs = np.zeros(n, dtype=np.int64)
        offs[1:] = np.cumsum(sizes[:-1])
        self._p_off = offs
        self._p_len = np.asarray(sizes, dtype=np.int64)
        total = int(offs[-1]) + sizes[-1] if n else 0
        self._vals_buf = np.zeros(total)
        self._grads_buf = np.zeros(total)
        self._values = [self._vals_buf[offs[i]:offs[i] + sizes[i]] for i in range(n)]
        self._grads = [self._grads_buf[offs[i]:offs[i] + sizes[i]] for i in range(n)]
        for ref, arr in self._const_vals.items():
            self._values[ref][:] = arr
        common = (self._p_ops, self._p_ia, self._p_ib, self._p_iaux, self._p_mm,
                  self._p_faux)
        if _impl.PACKED:
            packed = common + (self._p_off, self._p_len, self._vals_buf)
            self._fwd_args = packed + (out,)
            self._bwd_args = packed + (self._grads_buf, out)
        else:
            self._fwd_args = common + (self._values, out)
            self._bwd_args = common + (self._values, self._grads, out)
        self._sealed = True
        return self

    # -- evaluation ---------------------------------------------------

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(self._leaf_ids)

    def _bind(self, bindings):
        for name, ref in self._leaf_ids.items():
            if name not in bindings:
                raise ValueError(f"leaf {name!r} not bound")
            arr = np.asarray(bindings[name], dtype=np.float64)
            shape = self._shapes[ref]
            if arr.shape != shape and not (_scalar(shape) and arr.size == 1):
                raise ShapeMismatch(
                    f"binding for leaf {name!r} has shape {arr.shape}, tape expects {shape}"
                )
            self._values[ref][:] = arr.ravel()

    def _run_forward(self) -> float:
        bad = _impl.run_forward(*self._fwd_args)
        if bad >= 0:
            raise DomainError(
                f"{OP_NAMES[self._p_ops[bad]]} of a non-positive value at node {bad}"
            )
        return float(self._values[self._out][0])

    def forward(self, bindings) -> float:
        """Evaluate the recorded expression under the given leaf bindings."""
        if not self._sealed:
            raise RuntimeError("seal() the tape before evaluating")
        self._bind(bindings)
        return self._run_forward()

    def _active_mask(self, wrt: frozenset) -> np.ndarray:
        mask = self._masks.get(wrt)
        if mask is None:
            unknown = wrt - set(self._leaf_ids)
            if unknown:
                raise ValueError(f"unknown leaves in wrt: {sorted(unknown)}")
            active = np.zeros(len(self._ops), dtype=np.uint8)
            for name in wrt:
                active[self._leaf_ids[name]] = 1
            for i, (op, ia, ib, _x, _f) in enumerate(self._ops):
                if op in (OP_LEAF, OP_CONST):
                    continue
                if active[ia] or (ib >= 0 and active[ib]):
                    active[i] = 1
            mask = active
            self._masks[wrt] = mask
        return mask

    def backward(self, bindings, wrt) -> dict[str, np.ndarray]:
        """Gradient of the output for each leaf named in ``wrt``."""
        return self.value_and_grad(bindings, wrt)[1]

    # Bound-evaluation fast path: bind once, then rebind single leaves and
    # re-evaluate without dict traffic.  Used by the inner ascent loops,
    # where only the perturbed input changes between evaluations.

    def bind(self, bindings) -> None:
        self._bind(bindings)

    def rebind(self, name: str, arr) -> None:
        """Overwrite one leaf's buffer; trusts the caller on shape."""
        self._values[self._leaf_ids[name]][:] = arr

    def value_bound(self) -> float:
        return self._run_forward()

    def value_and_grad_bound(self, wrt: frozenset) -> float:
        """Forward plus backward on the current bindings; read gradients
        through ``grad_buffer`` (valid until the next backward)."""
        value = self._run_forward()
        _impl.run_backward(*self._bwd_args, self._active_mask(wrt))
        return value

    def grad_buffer(self, name: str) -> np.ndarray:
        """Raw (flat) gradient buffer of a leaf; copy before storing."""
        return self._grads[self._leaf_ids[name]]

    def value_and_grad(self, bindings, wrt):
        """Forward value plus gradients, sharing one forward pass."""
        if not self._sealed:
            raise RuntimeError("seal() the tape before evaluating")
        wrt = frozenset(wrt)
        self._bind(bindings)
        value = self._run_forward()
        _impl.run_backward(*self._bwd_args, self._active_mask(wrt))
        out = {}
        for name in wrt:
            ref = self._leaf_ids[name]
            out[name] = self._grads[ref].copy().reshape(self._shapes[ref])
        return value, out


def finite_diff_grad(fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The independent oracle used to validate tape gradients; keep it free of
    any tape machinery.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_tensor(point).copy()
    flat = x.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad.reshape(x.shape)
