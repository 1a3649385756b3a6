"""Typed SO(3)-covariant vectors and the operations that preserve covariance.

A covariant vector of type ``tau = (tau_0, tau_1, ...)`` is stored as one
complex matrix per ``l`` of shape ``(2l+1, tau_l)``; column ``j`` of that matrix is
the ``j``-th fragment of order ``l``.  Fragment matrices may carry leading batch
axes and may be :class:`cgnet.autodiff.Tensor` objects, in which case every
operation here is recorded on the tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from . import so3
from .errors import ArgumentError


class RepType:
    """Multiplicity vector ``(tau_0, ..., tau_L)``; trailing zeros are ignored."""

    __slots__ = ("_mult",)

    def __init__(self, multiplicities: Iterable[int] = ()):
        mult = [int(t) for t in multiplicities]
        if any(t < 0 for t in mult):
            raise ArgumentError(f"multiplicities must be non-negative: {mult}")
        while mult and mult[-1] == 0:
            mult.pop()
        self._mult = tuple(mult)

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return self._mult

    @property
    def lmax(self) -> int:
        """Largest l with non-zero multiplicity (-1 for the empty type)."""
        return len(self._mult) - 1

    @property
    def dim(self) -> int:
        return sum((2 * ell + 1) * t for ell, t in enumerate(self._mult))

    def __getitem__(self, ell: int) -> int:
        return self._mult[ell] if 0 <= ell < len(self._mult) else 0

    def __iter__(self):
        return iter(self._mult)

    def __len__(self):
        return len(self._mult)

    def __eq__(self, other):
        if not isinstance(other, RepType):
            other = RepType(other)
        return self._mult == other._mult

    def __hash__(self):
        return hash(self._mult)

    def __add__(self, other: "RepType") -> "RepType":
        other = other if isinstance(other, RepType) else RepType(other)
        n = max(len(self), len(other))
        return RepType(self[ell] + other[ell] for ell in range(n))

    def __repr__(self):
        return f"RepType({list(self._mult)})"

    def scaled(self, k: int) -> "RepType":
        return RepType(k * t for t in self._mult)

    def truncated(self, lmax: int) -> "RepType":
        return RepType(self._mult[: lmax + 1])

    def ells(self):
        """The l values with non-zero multiplicity."""
        return [ell for ell, t in enumerate(self._mult) if t > 0]


def as_type(t) -> RepType:
    return t if isinstance(t, RepType) else RepType(t)


def kappa(tau1, tau2) -> RepType:
    """Multiplicities of the CG-reduced tensor product of two types."""
    tau1, tau2 = as_type(tau1), as_type(tau2)
    if not len(tau1) or not len(tau2):
        return RepType()
    out = [0] * (tau1.lmax + tau2.lmax + 1)
    for l1, t1 in enumerate(tau1):
        for l2, t2 in enumerate(tau2):
            for ell in range(abs(l1 - l2), l1 + l2 + 1):
                out[ell] += t1 * t2
    return RepType(out)


@dataclass(frozen=True, eq=False)
class CovariantVector:
    """Covariant vector stored as per-l fragment matrices.

    ``fragments[l]`` has shape ``batch_shape + (2l+1, tau_l)`` and is present for
    exactly the l with ``tau_l > 0``.
    """

    rep_type: RepType
    fragments: Mapping[int, object]

    def __post_init__(self):
        rt = as_type(self.rep_type)
        object.__setattr__(self, "rep_type", rt)
        frags = dict(self.fragments)
        if set(frags) != set(rt.ells()):
            raise ArgumentError(
                f"fragments for l={sorted(frags)} do not match type {rt}")
        batch = None
        for ell, f in frags.items():
            shp = np.shape(ad.value_of(f))
            if len(shp) < 2 or shp[-2:] != (2 * ell + 1, rt[ell]):
                raise ArgumentError(
                    f"fragment l={ell} has shape {shp}, expected (..., {2 * ell + 1}, {rt[ell]})")
            if batch is None:
                batch = shp[:-2]
            elif shp[:-2] != batch:
                raise ArgumentError("fragments disagree on batch shape")
        object.__setattr__(self, "fragments", frags)
        object.__setattr__(self, "_batch", batch if batch is not None else ())

    @property
    def batch_shape(self) -> tuple:
        return self._batch

    def __getitem__(self, ell: int):
        return self.fragments[ell]

    @classmethod
    def zeros(cls, rep_type, batch_shape=()) -> "CovariantVector":
        rt = as_type(rep_type)
        return cls(rt, {ell: np.zeros(tuple(batch_shape) + (2 * ell + 1, rt[ell]), dtype=complex)
                        for ell in rt.ells()})

    @classmethod
    def random(cls, rep_type, rng, batch_shape=()) -> "CovariantVector":
        """Standard complex Gaussian entries."""
        rt = as_type(rep_type)
        frags = {}
        for ell in rt.ells():
            shape = tuple(batch_shape) + (2 * ell + 1, rt[ell])
            frags[ell] = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return cls(rt, frags)

    @classmethod
    def from_flat(cls, rep_type, flat) -> "CovariantVector":
        """Inverse of :meth:`flat` for unbatched numpy data."""
        rt = as_type(rep_type)
        flat = np.asarray(flat, dtype=complex)
        if flat.shape != (rt.dim,):
            raise ArgumentError(f"flat vector has shape {flat.shape}, expected ({rt.dim},)")
        frags, pos = {}, 0
        for ell in rt.ells():
            n = (2 * ell + 1) * rt[ell]
            # fragments are contiguous: column-major within each part
            frags[ell] = flat[pos:pos + n].reshape(rt[ell], 2 * ell + 1).T.copy()
            pos += n
        return cls(rt, frags)

    def flat(self) -> np.ndarray:
        """Concatenation of all fragments in canonical order (numpy data only)."""
        parts = [np.swapaxes(np.asarray(self.fragments[ell]), -1, -2).reshape(
            self.batch_shape + (-1,)) for ell in self.rep_type.ells()]
        if not parts:
            return np.zeros(self.batch_shape + (0,), dtype=complex)
        return np.concatenate(parts, axis=-1)

    def numpy(self) -> "CovariantVector":
        """Copy with tape tensors replaced by their values."""
        return CovariantVector(self.rep_type,
                               {ell: np.array(ad.value_of(f)) for ell, f in self.fragments.items()})

    def to_json(self) -> dict:
        if self.batch_shape:
            raise ArgumentError("only unbatched vectors serialise")
        frags = {}
        for ell in self.rep_type.ells():
            f = np.asarray(ad.value_of(self.fragments[ell]))
            frags[str(ell)] = [[[float(z.real), float(z.imag)] for z in f[:, j]]
                               for j in range(f.shape[1])]
        return {"type": list(self.rep_type), "fragments": frags}

    @classmethod
    def from_json(cls, doc) -> "CovariantVector":
        if isinstance(doc, str):
            doc = json.loads(doc)
        rt = RepType(doc["type"])
        frags = {}
        for key, cols in doc["fragments"].items():
            ell = int(key)
            arr = np.array(cols, dtype=float)
            if arr.ndim != 3 or arr.shape[2] != 2:
                raise ArgumentError(f"fragment l={ell} is not a list of [re, im] columns")
            frags[ell] = (arr[..., 0] + 1j * arr[..., 1]).T.copy()
        return cls(rt, frags)


def allclose_error(a: CovariantVector, b: CovariantVector) -> float:
    """Max absolute entrywise difference; inf if the types differ."""
    if a.rep_type != b.rep_type:
        return float("inf")
    err = 0.0
    for ell in a.rep_type.ells():
        d = np.abs(np.asarray(ad.value_of(a[ell])) - np.asarray(ad.value_of(b[ell])))
        if d.size:
            err = max(err, float(d.max()))
    return err


# ---------------------------------------------------------------- operations


def direct_sum(psis) -> CovariantVector:
    """Concatenate fragments per l, in argument order."""
    psis = list(psis)
    if not psis:
        raise ArgumentError("direct_sum needs at least one vector")
    if len(psis) == 1:
        return psis[0]
    out_type = psis[0].rep_type
    for p in psis[1:]:
        out_type = out_type + p.rep_type
    frags = {}
    for ell in out_type.ells():
        pieces = [p[ell] for p in psis if p.rep_type[ell] > 0]
        frags[ell] = pieces[0] if len(pieces) == 1 else ad.concatenate(pieces, axis=-1)
    return CovariantVector(out_type, frags)


def rotate(psi: CovariantVector, R: so3.EulerAngles) -> CovariantVector:
    """Apply ``D^l(R)`` to every fragment."""
    frags = {}
    for ell, f in psi.fragments.items():
        frags[ell] = f if ell == 0 else ad.matmul(so3.wigner_d(ell, R), f)
    return CovariantVector(psi.rep_type, frags)


def _outer(f1, f2):
    # (..., a, i) x (..., b, j) -> (..., a*b, i*j)
    s1, s2 = np.shape(ad.value_of(f1)), np.shape(ad.value_of(f2))
    if s1[-2] == 1 and s1[-1] == 1:
        return f2 * f1
    if s2[-2] == 1 and s2[-1] == 1:
        return f1 * f2
    t = ad.einsum("...ai,...bj->...abij", f1, f2)
    batch = np.shape(ad.value_of(t))[:-4]
    return ad.reshape(t, batch + (s1[-2] * s2[-2], s1[-1] * s2[-1]))


def cg_product(psi1: CovariantVector, psi2: CovariantVector,
               max_ell: int | None = None) -> CovariantVector:
    """Clebsch-Gordan reduced tensor product.

    Output type is ``kappa(type1, type2)`` (restricted to ``l <= max_ell`` if given).
    Within each output l, fragments are ordered lexicographically by
    ``(l1, j1, l2, j2)`` of their parents.
    """
    t1, t2 = psi1.rep_type, psi2.rep_type
    full = kappa(t1, t2)
    out_type = full if max_ell is None else full.truncated(max_ell)
    if out_type.lmax > so3.L_CG:
        raise so3.CapabilityError(
            f"product reaches l={out_type.lmax} > L_CG={so3.L_CG}; pass max_ell")
    # blocks[ell][l1] -> list over l2 of arrays (..., 2l+1, tau1, tau2)
    blocks: dict[int, dict[int, list]] = {}
    for l1 in t1.ells():
        for l2 in t2.ells():
            lo, hi = abs(l1 - l2), l1 + l2
            if max_ell is not None:
                hi = min(hi, max_ell)
            if hi < lo:
                continue
            prod = _outer(psi1[l1], psi2[l2])
            cmat = np.vstack([so3.cg_block(l1, l2, ell) for ell in range(lo, hi + 1)])
            if l1 == 0 and l2 == 0:
                coupled = prod
            else:
                coupled = ad.matmul(cmat.astype(complex), prod)
            batch = np.shape(ad.value_of(prod))[:-2]
            row = 0
            for ell in range(lo, hi + 1):
                n = 2 * ell + 1
                piece = coupled if (lo == hi) else ad.getitem(
                    coupled, (Ellipsis, slice(row, row + n), slice(None)))
                piece = ad.reshape(piece, batch + (n, t1[l1], t2[l2]))
                blocks.setdefault(ell, {}).setdefault(l1, []).append(piece)
                row += n
    frags = {}
    for ell in out_type.ells():
        cols = []
        for l1 in sorted(blocks[ell]):
            pieces = blocks[ell][l1]
            joined = pieces[0] if len(pieces) == 1 else ad.concatenate(pieces, axis=-1)
            shp = np.shape(ad.value_of(joined))
            cols.append(ad.reshape(joined, shp[:-2] + (shp[-2] * shp[-1],)))
        frags[ell] = cols[0] if len(cols) == 1 else ad.concatenate(cols, axis=-1)
    return CovariantVector(out_type, frags)


def truncate(psi: CovariantVector, max_ell: int) -> CovariantVector:
    rt = psi.rep_type.truncated(max_ell)
    return CovariantVector(rt, {ell: psi[ell] for ell in rt.ells()})


def cg_product_chain(psis, truncate_ell: int) -> CovariantVector:
    """Left fold ``((p1 x p2) x p3) x ...`` dropping ``l > truncate_ell`` after each step."""
    psis = list(psis)
    if not psis:
        raise ArgumentError("cg_product_chain needs at least one vector")
    acc = psis[0]
    for p in psis[1:]:
        acc = cg_product(acc, p, max_ell=truncate_ell)
    return acc


def chain_type(types, truncate_ell: int) -> RepType:
    """Type arithmetic of :func:`cg_product_chain`."""
    types = [as_type(t) for t in types]
    acc = types[0]
    for t in types[1:]:
        acc = kappa(acc, t).truncated(truncate_ell)
    return acc


class MixWeights:
    """Per-l mixing matrices ``W^l`` of shape ``(tau_out_l, tau_in_l)``."""

    def __init__(self, in_type, out_type, matrices: Mapping[int, object]):
        self.in_type = as_type(in_type)
        self.out_type = as_type(out_type)
        mats = dict(matrices)
        if set(mats) != set(self.out_type.ells()):
            raise ArgumentError(
                f"weights given for l={sorted(mats)}, output type needs {self.out_type.ells()}")
        for ell, w in mats.items():
            shp = np.shape(ad.value_of(w))
            want = (self.out_type[ell], self.in_type[ell])
            if shp != want:
                raise ArgumentError(f"W^{ell} has shape {shp}, expected {want}")
        self.matrices = mats

    def __getitem__(self, ell):
        return self.matrices[ell]

    def shapes(self) -> dict[int, tuple[int, int]]:
        return {ell: np.shape(ad.value_of(w)) for ell, w in self.matrices.items()}

    @classmethod
    def identity(cls, rep_type) -> "MixWeights":
        rt = as_type(rep_type)
        return cls(rt, rt, {ell: np.eye(rt[ell], dtype=complex) for ell in rt.ells()})

    @classmethod
    def init(cls, in_type, out_type, rng) -> "MixWeights":
        """Uniform [-a, a] real and imaginary parts, ``a = fan_in ** -0.5``."""
        in_type, out_type = as_type(in_type), as_type(out_type)
        mats = {}
        for ell in out_type.ells():
            shape = (out_type[ell], in_type[ell])
            a = 1.0 / np.sqrt(in_type[ell]) if in_type[ell] else 0.0
            mats[ell] = rng.uniform(-a, a, shape) + 1j * rng.uniform(-a, a, shape)
        return cls(in_type, out_type, mats)

    def to_json(self) -> dict:
        return {
            "in_type": list(self.in_type),
            "out_type": list(self.out_type),
            "W": {str(ell): [[[float(z.real), float(z.imag)] for z in row]
                             for row in np.asarray(ad.value_of(w))]
                  for ell, w in self.matrices.items()},
        }

    @classmethod
    def from_json(cls, doc) -> "MixWeights":
        mats = {}
        for key, rows in doc["W"].items():
            arr = np.array(rows, dtype=float).reshape(len(rows), -1, 2)
            mats[int(key)] = arr[..., 0] + 1j * arr[..., 1]
        return cls(doc["in_type"], doc["out_type"], mats)


def mix(psi: CovariantVector, W: MixWeights) -> CovariantVector:
    """Per-l mixing ``F^l (W^l)^T``; input parts with l outside the output type are dropped."""
    if psi.rep_type.truncated(W.out_type.lmax) != W.in_type.truncated(W.out_type.lmax):
        raise ArgumentError(f"weights expect input {W.in_type}, got {psi.rep_type}")
    frags = {}
    for ell in W.out_type.ells():
        w = W[ell]
        if psi.rep_type[ell] == 0:
            frags[ell] = np.zeros(psi.batch_shape + (2 * ell + 1, W.out_type[ell]), dtype=complex)
            continue
        wt = ad.swapaxes(w, 0, 1) if isinstance(w, ad.Tensor) else np.asarray(w).T
        frags[ell] = ad.matmul(psi[ell], wt)
    return CovariantVector(W.out_type, frags)


def invariant_part(psi: CovariantVector):
    """The ``tau_0`` scalar channels (shape ``batch + (tau_0,)``)."""
    if psi.rep_type[0] == 0:
        return np.zeros(psi.batch_shape + (0,), dtype=complex)
    f = psi[0]
    return ad.getitem(f, (Ellipsis, 0, slice(None))) if isinstance(f, ad.Tensor) else f[..., 0, :]


# ------------------------------------------------------------ Schur fitting


def fit_mix_weights(inputs, outputs, out_type):
    """Least-squares fit of per-l mixing matrices to sampled (input, output) pairs.

    ``inputs`` and ``outputs`` are sequences of unbatched CovariantVectors.
    Returns ``(MixWeights, relative_residual)``.  A small residual means the
    sampled map has the block form that covariance forces on linear maps.
    """
    inputs, outputs = list(inputs), list(outputs)
    in_type, out_type = inputs[0].rep_type, as_type(out_type)
    mats, res2, tot2 = {}, 0.0, 0.0
    for ell in out_type.ells():
        # every row of every sample: F_in^l (2l+1, tin) @ W^T (tin, tout) = F_out^l
        y = np.concatenate([np.asarray(o[ell]) for o in outputs], axis=0)
        tot2 += float(np.sum(np.abs(y) ** 2))
        if in_type[ell] == 0:
            mats[ell] = np.zeros((out_type[ell], 0), dtype=complex)
            res2 += float(np.sum(np.abs(y) ** 2))
            continue
        x = np.concatenate([np.asarray(i[ell]) for i in inputs], axis=0)
        wt, *_ = np.linalg.lstsq(x, y, rcond=None)
        mats[ell] = wt.T
        res2 += float(np.sum(np.abs(x @ wt - y) ** 2))
    # parts of the output that no W^l can produce count fully toward the residual
    for ell in outputs[0].rep_type.ells():
        if ell not in out_type.ells():
            res2 += sum(float(np.sum(np.abs(np.asarray(o[ell])) ** 2)) for o in outputs)
    W = MixWeights(in_type, out_type, mats)
    return W, float(np.sqrt(res2 / tot2)) if tot2 else 0.0
