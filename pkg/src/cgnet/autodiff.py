"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Tensor` leaves as
a Wengert list.  Complex values are supported; for a real loss ``L`` the
adjoint stored for a complex array ``z = x + iy`` is ``dL/dx + i dL/dy``, so each
complex parameter behaves as two real parameters.  Adjoints of real-valued
tensors are real.

The module-level functions (``einsum``, ``concatenate``, ...) accept plain
ndarrays as well; when no argument is a Tensor they just call numpy, so the
covariant algebra is written once and used both with and without a tape.
"""

from __future__ import annotations

import string

import numpy as np


class Tape:
    """Recorded operation graph of one forward evaluation."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        # per node: (forward fn or None for leaves, input refs, vjp)
        self._nodes: list[tuple] = []
        self._names: dict[str, int] = {}

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value, name: str | None = None) -> "Tensor":
        value = np.array(value, copy=True)
        t = self._push(value, None, (), None)
        if name is not None:
            self._names[name] = t.index
        return t

    def _push(self, value, fn, refs, vjp) -> "Tensor":
        self._values.append(value)
        self._nodes.append((fn, refs, vjp))
        return Tensor(self, len(self._values) - 1)

    def value(self, t: "Tensor") -> np.ndarray:
        return self._values[t.index]

    def leaves(self) -> dict[str, "Tensor"]:
        return {name: Tensor(self, i) for name, i in self._names.items()}

    def backward(self, output: "Tensor", adjoint=1.0) -> dict[str, np.ndarray]:
        """Adjoints of every named leaf for ``output`` seeded with ``adjoint``."""
        grads = self.gradients(output, adjoint)
        out = {}
        for name, i in self._names.items():
            g = grads[i]
            out[name] = np.zeros_like(self._values[i]) if g is None else g
        return out

    def gradients(self, output: "Tensor", adjoint=1.0) -> list:
        if output.tape is not self:
            raise ValueError("output tensor belongs to another tape")
        n = output.index + 1
        grads: list = [None] * n
        seed = np.asarray(adjoint)
        grads[output.index] = np.broadcast_to(seed, self._values[output.index].shape).astype(
            np.result_type(seed, self._values[output.index]))
        for i in range(output.index, -1, -1):
            g = grads[i]
            fn, refs, vjp = self._nodes[i]
            if g is None or vjp is None:
                continue
            vals = [self._values[r] if isinstance(r, int) else r.const for r in refs]
            needs = [isinstance(r, int) for r in refs]
            for r, gi in zip(refs, vjp(g, vals, self._values[i], needs)):
                if not isinstance(r, int) or gi is None:
                    continue
                if not np.iscomplexobj(self._values[r]) and np.iscomplexobj(gi):
                    gi = gi.real
                grads[r] = gi if grads[r] is None else grads[r] + gi
        return grads

    def replay(self, leaves: dict[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Re-run the recorded program, optionally with new leaf values."""
        leaves = leaves or {}
        by_index = {self._names[k]: np.asarray(v) for k, v in leaves.items()}
        vals: list[np.ndarray] = []
        for i, (fn, refs, _) in enumerate(self._nodes):
            if fn is None:
                vals.append(by_index.get(i, self._values[i]))
            else:
                vals.append(fn(*[vals[r] if isinstance(r, int) else r.const for r in refs]))
        return vals


class _Const:
    __slots__ = ("const",)

    def __init__(self, value):
        self.const = value


class Tensor:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(index={self.index}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    @property
    def real(self):
        return real(self)

    @property
    def imag(self):
        return imag(self)

    def conj(self):
        return conj(self)


def value_of(x):
    return x.value if isinstance(x, Tensor) else x


def _record(fn, vjp, *inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Tensor):
            tape = x.tape
            break
    vals = [value_of(x) for x in inputs]
    out = fn(*vals)
    if tape is None:
        return out
    refs = []
    for x in inputs:
        if isinstance(x, Tensor):
            if x.tape is not tape:
                raise ValueError("tensors from different tapes")
            refs.append(x.index)
        else:
            refs.append(_Const(x))
    return tape._push(out, fn, tuple(refs), vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def _add_vjp(g, vals, out, needs):
    return [_unbroadcast(g, np.shape(v)) if n else None for v, n in zip(vals, needs)]


def add(a, b):
    return _record(np.add, _add_vjp, a, b)


def _neg_vjp(g, vals, out, needs):
    return [-g]


def neg(a):
    return _record(np.negative, _neg_vjp, a)


def _mul_vjp(g, vals, out, needs):
    a, b = vals
    return [
        _unbroadcast(g * np.conj(b), np.shape(a)) if needs[0] else None,
        _unbroadcast(g * np.conj(a), np.shape(b)) if needs[1] else None,
    ]


def mul(a, b):
    return _record(np.multiply, _mul_vjp, a, b)


def _matmul_vjp(g, vals, out, needs):
    a, b = vals
    ga = gb = None
    if needs[0]:
        ga = _unbroadcast(g @ np.conj(np.swapaxes(b, -1, -2)), np.shape(a))
    if needs[1]:
        gb = _unbroadcast(np.conj(np.swapaxes(a, -1, -2)) @ g, np.shape(b))
    return [ga, gb]


def matmul(a, b):
    """Batched matrix product (both operands at least 2-D)."""
    return _record(np.matmul, _matmul_vjp, a, b)


_LETTERS = string.ascii_uppercase


def _expand_ellipsis(spec: str, shapes) -> str:
    ins, out = spec.split("->")
    ins = ins.split(",")
    if "..." not in spec:
        return spec
    nb = 0
    for sub, shp in zip(ins, shapes):
        if "..." in sub:
            nb = max(nb, len(shp) - (len(sub) - 3))
    batch = _LETTERS[:nb]
    new_ins = []
    for sub, shp in zip(ins, shapes):
        if "..." in sub:
            k = len(shp) - (len(sub) - 3)
            sub = sub.replace("...", batch[nb - k:])
        new_ins.append(sub)
    out = out.replace("...", batch)
    return ",".join(new_ins) + "->" + out


def einsum(spec: str, *operands):
    """Explicit-output einsum; batch ellipses must not broadcast."""
    spec = _expand_ellipsis(spec.replace(" ", ""), [np.shape(value_of(x)) for x in operands])
    ins, out_sub = spec.split("->")
    ins = ins.split(",")

    def fn(*vals):
        return np.einsum(spec, *vals)

    def vjp(g, vals, out, needs):
        res = []
        for k, need in enumerate(needs):
            if not need:
                res.append(None)
                continue
            others = [ins[j] for j in range(len(ins)) if j != k]
            ovals = [np.conj(vals[j]) for j in range(len(ins)) if j != k]
            sub = ",".join([out_sub] + others) + "->" + ins[k]
            res.append(np.einsum(sub, g, *ovals))
        return res

    return _record(fn, vjp, *operands)


def _sum_vjp_factory(axis):
    def vjp(g, vals, out, needs):
        shape = np.shape(vals[0])
        if axis is None:
            return [np.broadcast_to(g, shape).copy()]
        axes = (axis,) if isinstance(axis, int) else axis
        gg = g
        for ax in sorted(a % len(shape) for a in axes):
            gg = np.expand_dims(gg, ax)
        return [np.broadcast_to(gg, shape).copy()]
    return vjp


def sum_(a, axis=None):
    return _record(lambda v: np.sum(v, axis=axis), _sum_vjp_factory(axis), a)


def reshape(a, shape):
    shape = tuple(shape)

    def vjp(g, vals, out, needs):
        return [g.reshape(np.shape(vals[0]))]

    return _record(lambda v: np.reshape(v, shape), vjp, a)


def swapaxes(a, ax1, ax2):
    def vjp(g, vals, out, needs):
        return [np.swapaxes(g, ax1, ax2)]

    return _record(lambda v: np.swapaxes(v, ax1, ax2), vjp, a)


def getitem(a, key):
    def vjp(g, vals, out, needs):
        full = np.zeros(np.shape(vals[0]), dtype=np.result_type(g, vals[0]))
        np.add.at(full, key, g)
        return [full]

    return _record(lambda v: v[key], vjp, a)


def concatenate(arrays, axis=-1):
    arrays = list(arrays)
    if not any(isinstance(x, Tensor) for x in arrays):
        return np.concatenate(arrays, axis=axis)

    def fn(*vals):
        return np.concatenate(vals, axis=axis)

    def vjp(g, vals, out, needs):
        sizes = [np.shape(v)[axis] for v in vals]
        cuts = np.cumsum(sizes)[:-1]
        return list(np.split(g, cuts, axis=axis))

    return _record(fn, vjp, *arrays)


def stack(arrays, axis=0):
    arrays = list(arrays)
    if not any(isinstance(x, Tensor) for x in arrays):
        return np.stack(arrays, axis=axis)

    def fn(*vals):
        return np.stack(vals, axis=axis)

    def vjp(g, vals, out, needs):
        return [np.take(g, i, axis=axis) for i in range(len(vals))]

    return _record(fn, vjp, *arrays)


# ------------------------------------------------------- complex / real parts


def _real_vjp(g, vals, out, needs):
    return [np.real(g).astype(complex) if np.iscomplexobj(vals[0]) else np.real(g)]


def real(a):
    return _record(np.real, _real_vjp, a)


def _imag_vjp(g, vals, out, needs):
    return [1j * np.real(g)]


def imag(a):
    return _record(np.imag, _imag_vjp, a)


def _conj_vjp(g, vals, out, needs):
    return [np.conj(g)]


def conj(a):
    return _record(np.conj, _conj_vjp, a)


# --------------------------------------------------- real elementwise helpers


def power(a, p: float):
    """``a ** p`` for real positive ``a``."""

    def vjp(g, vals, out, needs):
        return [g * p * np.power(vals[0], p - 1.0)]

    return _record(lambda v: np.power(v, p), vjp, a)


def norm(a, axis=-1):
    """Euclidean norm of a real array along ``axis``."""

    def fn(v):
        return np.sqrt(np.sum(v * v, axis=axis))

    def vjp(g, vals, out, needs):
        return [np.expand_dims(g / out, axis) * vals[0]]

    return _record(fn, vjp, a)


_LOG2 = np.log(2.0)


def _ssp(x):
    return np.logaddexp(0.0, x) - _LOG2


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def shifted_softplus(a):
    """``log(1 + e^x) - log 2``; for complex input applied to real and imaginary parts."""

    def fn(v):
        if np.iscomplexobj(v):
            return _ssp(v.real) + 1j * _ssp(v.imag)
        return _ssp(v)

    def vjp(g, vals, out, needs):
        v = vals[0]
        if np.iscomplexobj(v):
            g = np.asarray(g, dtype=complex)
            return [g.real * _sigmoid(v.real) + 1j * g.imag * _sigmoid(v.imag)]
        return [np.real(g) * _sigmoid(v)]

    return _record(fn, vjp, a)
