"""Covariant aggregation gates.

Every gate maps the children of a node (their states and their positions
relative to the node) to the node's state.  A gate builds a set of covariant
channels from CG products of child states with the spherical embedding of the
relative positions, sums over children (which makes it permutation invariant),
weights each channel by an inverse power of the distance, concatenates the
channels and mixes them with per-l weight matrices.

Children are passed around internally as a batch: an ``(n, 3)`` array of
offsets plus a batched :class:`CovariantVector` of states.  A child may be
*anchored*: it sits exactly at the parent position by construction (its part is
the parent's part), so it has no direction and only enters the state channel
and, through pair differences, the ``first_relative`` channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import so3
from .covariant import (
    CovariantVector,
    MixWeights,
    RepType,
    as_type,
    cg_product,
    cg_product_chain,
    chain_type,
    direct_sum,
    mix,
)
from .errors import ArgumentError, DegeneracyError

R_MIN = 1e-6
KINDS = ("zeroth", "first_pairwise", "first_relative", "moment")
NONLINEARITIES = (None, "ssp")
VECTOR_TYPE = RepType([0, 1])

_U = so3.cartesian_to_spherical_basis()


@dataclass(frozen=True)
class RelativePosition:
    cartesian: np.ndarray
    radius: float
    sph1: CovariantVector


def embed_relative_position(parent_pos, child_pos) -> RelativePosition:
    """Offset of a child from its parent, with its spherical (l=1) embedding."""
    parent_pos = np.asarray(parent_pos, dtype=float)
    child_pos = np.asarray(child_pos, dtype=float)
    if parent_pos.shape != (3,) or child_pos.shape != (3,):
        raise ArgumentError("positions must be 3-vectors")
    d = child_pos - parent_pos
    r = float(np.linalg.norm(d))
    if not r > R_MIN:
        raise DegeneracyError(f"child at distance {r:g} <= r_min={R_MIN:g} from parent")
    sph = CovariantVector(VECTOR_TYPE, {1: (_U @ d)[:, None]})
    return RelativePosition(d, r, sph)


@dataclass(frozen=True)
class GateConfig:
    """Configuration of one aggregation gate.

    ``weights`` may be left as ``None`` and filled later with :meth:`init_weights`
    once the child type is known.  ``state_channel`` adds the plain sum of child
    states as an extra channel.
    """

    kind: str
    output_type: RepType
    radial_powers: tuple = (0, 1, 2)
    moment_order: int = 1
    truncate_ell: int = 2
    weights: MixWeights | None = None
    nonlinearity: str | None = None
    state_channel: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown gate kind {self.kind!r}; expected one of {KINDS}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ArgumentError(f"unknown nonlinearity {self.nonlinearity!r}")
        powers = tuple(int(s) for s in self.radial_powers)
        if any(s < 0 for s in powers):
            raise ArgumentError("radial powers must be non-negative")
        object.__setattr__(self, "radial_powers", powers)
        object.__setattr__(self, "output_type", as_type(self.output_type))
        if self.kind == "moment" and self.moment_order < 1:
            raise ArgumentError("moment gate needs moment_order >= 1")
        if self.truncate_ell > so3.L_CG:
            raise so3.CapabilityError(f"truncate_ell={self.truncate_ell} > L_CG={so3.L_CG}")
        if self.weights is not None and self.weights.out_type != self.output_type:
            raise ArgumentError("weights output type disagrees with output_type")

    def init_weights(self, child_type, rng) -> "GateConfig":
        pre = gate_output_type(child_type, None, self)
        return replace(self, weights=MixWeights.init(pre, self.output_type, rng))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "radial_powers": list(self.radial_powers),
            "moment_order": self.moment_order,
            "truncate_ell": self.truncate_ell,
            "output_type": list(self.output_type),
            "nonlinearity": self.nonlinearity,
            "state_channel": self.state_channel,
            "weights": None if self.weights is None else self.weights.to_json(),
        }

    @classmethod
    def from_json(cls, doc) -> "GateConfig":
        w = doc.get("weights")
        return cls(
            kind=doc["kind"],
            output_type=RepType(doc["output_type"]),
            radial_powers=tuple(doc.get("radial_powers", (0, 1, 2))),
            moment_order=int(doc.get("moment_order", 1)),
            truncate_ell=int(doc.get("truncate_ell", 2)),
            weights=None if w is None else MixWeights.from_json(w),
            nonlinearity=doc.get("nonlinearity"),
            state_channel=bool(doc.get("state_channel", False)),
        )


def channel_type(child_type, cfg: GateConfig) -> RepType:
    """Type of one radial channel (before summing channels)."""
    child_type, T = as_type(child_type), cfg.truncate_ell
    v = VECTOR_TYPE
    if cfg.kind == "zeroth":
        return chain_type([child_type, v], T)
    if cfg.kind == "first_pairwise":
        return chain_type([child_type, child_type, v, v], T)
    if cfg.kind == "first_relative":
        return chain_type([child_type, child_type, v], T)
    return chain_type([v] * cfg.moment_order + [child_type], T)


def gate_output_type(child_type, n_children_irrelevant, cfg: GateConfig) -> RepType:
    """Pre-mix type: the direct sum of all channels the gate computes."""
    child_type = as_type(child_type)
    out = channel_type(child_type, cfg).scaled(len(cfg.radial_powers))
    if cfg.state_channel:
        out = child_type.truncated(cfg.truncate_ell) + out
    return out


# ----------------------------------------------------------------- helpers


def _take(psi: CovariantVector, idx) -> CovariantVector:
    idx = np.asarray(idx, dtype=int)
    return CovariantVector(psi.rep_type, {ell: ad.getitem(f, idx) for ell, f in psi.fragments.items()})


def _segment_sum(psi: CovariantVector, seg: np.ndarray, w=None) -> CovariantVector:
    """``out[p] = sum_{b: seg[b] == p} w[b] * psi[b]`` with ``seg`` a (P, B) 0/1 matrix."""
    if w is None:
        return CovariantVector(psi.rep_type,
                               {ell: ad.einsum("pb,bmi->pmi", seg, f) for ell, f in psi.fragments.items()})
    sw = ad.mul(seg, w)
    return CovariantVector(psi.rep_type,
                           {ell: ad.einsum("pb,bmi->pmi", sw, f) for ell, f in psi.fragments.items()})


def _indicator(index: np.ndarray, n_parents: int) -> np.ndarray:
    seg = np.zeros((n_parents, len(index)))
    seg[index, np.arange(len(index))] = 1.0
    return seg


def _sph1(offsets) -> CovariantVector:
    """Batched spherical embedding of ``(n, 3)`` real offsets -> type (0,1)."""
    y = ad.matmul(offsets, _U.T.copy())
    n = np.shape(ad.value_of(offsets))[0]
    return CovariantVector(VECTOR_TYPE, {1: ad.reshape(y, (n, 3, 1))})


def _radii(offsets):
    r = ad.norm(offsets, axis=-1)
    rv = ad.value_of(r)
    if rv.size and not np.all(rv > R_MIN):
        raise DegeneracyError(f"child at distance {float(rv.min()):g} <= r_min={R_MIN:g}")
    return r


def _nonlinear(psi: CovariantVector, tag) -> CovariantVector:
    if tag is None or psi.rep_type[0] == 0:
        return psi
    frags = dict(psi.fragments)
    frags[0] = ad.shifted_softplus(frags[0])
    return CovariantVector(psi.rep_type, frags)


def _pairs_within(parent: np.ndarray, members: np.ndarray, diagonal: bool):
    """Index pairs (i, j) of ``members`` sharing a parent."""
    ii, jj = [], []
    for a in members:
        for b in members:
            if parent[a] == parent[b] and (diagonal or a != b):
                ii.append(a)
                jj.append(b)
    return np.array(ii, dtype=int), np.array(jj, dtype=int)


# -------------------------------------------------------------- evaluation


def evaluate_gate(cfg: GateConfig, offsets, states: CovariantVector, anchored=None,
                  parent=None, n_parents: int | None = None, child_keys=None) -> CovariantVector:
    """Run a gate on a batch of children.

    ``offsets`` is ``(n, 3)`` (array or tape tensor) of child positions minus the
    parent position; ``states`` is a CovariantVector with batch shape ``(n,)``;
    ``anchored`` is an optional boolean mask of children that coincide with the
    parent by construction.

    With ``parent`` (an int array mapping each child to a parent index) the
    children of ``n_parents`` nodes are processed together and the result has
    batch shape ``(n_parents,)``; otherwise all children belong to one node and
    the result is unbatched.

    ``child_keys`` optionally labels children that coincide by construction
    (equal keys, e.g. equal parts); ``first_relative`` skips such pairs just as
    it skips the diagonal.
    """
    if cfg.weights is None:
        raise ArgumentError("gate weights are not initialised")
    if len(states.batch_shape) != 1:
        raise ArgumentError("child states must carry exactly one batch axis")
    n = states.batch_shape[0]
    if np.shape(ad.value_of(offsets)) != (n, 3):
        raise ArgumentError(f"offsets shape {np.shape(ad.value_of(offsets))} != ({n}, 3)")
    single = parent is None
    if single:
        parent, n_parents = np.zeros(n, dtype=int), 1
    parent = np.asarray(parent, dtype=int)
    anchored = np.zeros(n, dtype=bool) if anchored is None else np.asarray(anchored, dtype=bool)
    child_type = states.rep_type
    ctype = channel_type(child_type, cfg)
    T = cfg.truncate_ell
    channels: list[CovariantVector] = []

    if cfg.state_channel:
        base = states if child_type.lmax <= T else _truncate_batch(states, T)
        channels.append(_segment_sum(base, _indicator(parent, n_parents)))

    free = np.flatnonzero(~anchored)
    terms = None
    if cfg.kind == "first_relative":
        ii, jj = _pairs_within(parent, np.arange(n), diagonal=False)
        if child_keys is not None and len(ii):
            keys = np.asarray(child_keys)
            keep = keys[ii] != keys[jj]
            ii, jj = ii[keep], jj[keep]
        if len(ii):
            rel = ad.getitem(offsets, ii) - ad.getitem(offsets, jj)
            r = _radii(rel)
            terms = cg_product_chain([_take(states, ii), _take(states, jj), _sph1(rel)], T)
            owner = parent[ii]
    elif len(free):
        off = offsets if len(free) == n else ad.getitem(offsets, free)
        r = _radii(off)
        sph = _sph1(off)
        psi = states if len(free) == n else _take(states, free)
        owner = parent[free]
        if cfg.kind == "zeroth":
            terms = cg_product(psi, sph, max_ell=T)
        elif cfg.kind == "moment":
            terms = cg_product_chain([sph] * cfg.moment_order + [psi], T)
        else:  # first_pairwise
            ii, jj = _pairs_within(owner, np.arange(len(free)), diagonal=True)
            terms = cg_product_chain([_take(psi, ii), _take(psi, jj), _take(sph, ii), _take(sph, jj)], T)
            r = ad.getitem(r, ii) * ad.getitem(r, jj)
            owner = owner[ii]

    if terms is None:
        channels.extend(CovariantVector.zeros(ctype, (n_parents,)) for _ in cfg.radial_powers)
    else:
        seg = _indicator(owner, n_parents)
        for s in cfg.radial_powers:
            w = None if s == 0 else ad.power(r, -float(s))
            channels.append(_segment_sum(terms, seg, w))

    pre = direct_sum(channels) if channels else CovariantVector.zeros(RepType(), (n_parents,))
    expected = gate_output_type(child_type, n, cfg)
    if pre.rep_type != expected:
        raise AssertionError(f"gate type {pre.rep_type} != predicted {expected}")
    out = _nonlinear(mix(pre, cfg.weights), cfg.nonlinearity)
    if single:
        out = CovariantVector(out.rep_type, {ell: ad.getitem(f, 0) if isinstance(f, ad.Tensor) else f[0]
                                             for ell, f in out.fragments.items()})
    return out


def _truncate_batch(psi, T):
    rt = psi.rep_type.truncated(T)
    return CovariantVector(rt, {ell: psi[ell] for ell in rt.ells()})


def _unpack_children(children):
    children = list(children)
    if not children:
        return np.zeros((0, 3)), None, np.zeros(0, dtype=bool)
    types = {c[1].rep_type for c in children}
    if len(types) != 1:
        raise ArgumentError(f"children have mismatched types {sorted(map(repr, types))}")
    offsets = np.array([np.zeros(3) if rp is None else rp.cartesian for rp, _ in children])
    anchored = np.array([rp is None for rp, _ in children])
    rt = children[0][1].rep_type
    states = CovariantVector(rt, {ell: np.stack([np.asarray(ad.value_of(c[1][ell])) for c in children])
                                  for ell in rt.ells()})
    return offsets, states, anchored


def _run(children, cfg, allowed):
    if cfg.kind not in allowed:
        raise ArgumentError(f"gate kind {cfg.kind!r} not handled here (expected {allowed})")
    offsets, states, anchored = _unpack_children(children)
    if states is None:
        return CovariantVector.zeros(cfg.output_type)
    return evaluate_gate(cfg, offsets, states, anchored)


def zeroth_order_gate(children, cfg: GateConfig) -> CovariantVector:
    """Children are ``(RelativePosition | None, CovariantVector)`` pairs."""
    return _run(children, cfg, ("zeroth",))


def first_order_gate(children, cfg: GateConfig) -> CovariantVector:
    return _run(children, cfg, ("first_pairwise", "first_relative"))


def moment_gate(children, cfg: GateConfig) -> CovariantVector:
    return _run(children, cfg, ("moment",))


def apply_gate(children, cfg: GateConfig) -> CovariantVector:
    return _run(children, cfg, KINDS)


# ----------------------------------------------------------- moment tensors


@dataclass(frozen=True)
class MomentTensor:
    order: int
    entries: np.ndarray = field(repr=False)


def moment_tensor(k: int, vectors) -> MomentTensor:
    """Mean k-fold outer power ``(1/m) sum_i r_i^{(x)k}``."""
    if k < 1:
        raise ArgumentError("moment order must be >= 1")
    vecs = np.asarray(vectors, dtype=float)
    if vecs.ndim != 2 or vecs.shape[1] != 3 or len(vecs) == 0:
        raise ArgumentError("need a non-empty list of 3-vectors")
    acc = vecs
    for _ in range(k - 1):
        acc = (acc[..., None] * vecs.reshape((len(vecs),) + (1,) * (acc.ndim - 1) + (3,)))
    mean = acc.mean(axis=0)
    # read every entry from its sorted multi-index so the symmetry is exact
    canonical = np.sort(np.indices((3,) * k), axis=0)
    return MomentTensor(k, mean[tuple(canonical)])
