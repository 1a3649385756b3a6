"""Self-test runner: every invariant suite of the library, with live tolerances.

Each suite returns the worst error it observed; it passes when that error is
at most its tolerance.  Exact suites (selection rules, symmetry, determinism)
count violations against a tolerance of zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import gates, so3
from .covariant import (CovariantVector, MixWeights, RepType, allclose_error, cg_product,
                        cg_product_chain, direct_sum, fit_mix_weights, kappa, mix, rotate)
from .network import Model, System, backward, forward
from .scheme import CompositionScheme, SchemeNode, build_scheme, validate_scheme


@dataclass
class SuiteResult:
    name: str
    module: str
    passed: bool
    worst_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""


@dataclass
class SelfTestReport:
    results: list[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[SuiteResult]:
        return [r for r in self.results if not r.passed]

    def format(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{status}  {r.module:9s} {r.name:28s} worst={r.worst_error:.3e} "
                         f"tol={r.tolerance:.1e}  ({r.seconds:.2f}s){'  ' + r.detail if r.detail else ''}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"({len(self.results) - len(self.failures())}/{len(self.results)} suites)")
        return "\n".join(lines)


# registry: name -> (module, tolerance, function(rng) -> worst error)
SUITES: dict[str, tuple[str, float, object]] = {}


def suite(name: str, module: str, tolerance: float):
    def register(fn):
        SUITES[name] = (module, tolerance, fn)
        return fn
    return register


# ------------------------------------------------------------------ so3_core

_LMAX = 4


@suite("wigner_unitarity", "so3_core", 1e-12)
def _unitarity(rng):
    worst = 0.0
    for _ in range(5):
        R = so3.random_rotation(rng)
        for ell in range(so3.L_CG + 1):
            D = so3.wigner_d(ell, R)
            worst = max(worst, np.abs(D @ D.conj().T - np.eye(2 * ell + 1)).max())
    return worst


@suite("wigner_homomorphism", "so3_core", 1e-10)
def _homomorphism(rng):
    worst = 0.0
    for _ in range(5):
        R1, R2 = so3.random_rotation(rng), so3.random_rotation(rng)
        R12 = R1.compose(R2)
        for ell in range(so3.L_CG + 1):
            err = so3.wigner_d(ell, R1) @ so3.wigner_d(ell, R2) - so3.wigner_d(ell, R12)
            worst = max(worst, np.abs(err).max())
    return worst


@suite("cg_completeness", "so3_core", 1e-12)
def _completeness(rng):
    worst = 0.0
    half = so3.L_CG // 2
    for l1 in range(half + 1):
        for l2 in range(half + 1):
            C = so3.cg_matrix(l1, l2)
            n = (2 * l1 + 1) * (2 * l2 + 1)
            if C.shape != (n, n):
                return float("inf")
            worst = max(worst, np.abs(C @ C.T - np.eye(n)).max())
    return worst


@suite("cg_block_diagonalization", "so3_core", 1e-10)
def _block_diag(rng):
    worst = 0.0
    for _ in range(5):
        R = so3.random_rotation(rng)
        Ds = [so3.wigner_d(ell, R) for ell in range(2 * _LMAX + 1)]
        for l1 in range(_LMAX + 1):
            for l2 in range(_LMAX + 1):
                C = so3.cg_matrix(l1, l2)
                lhs = C @ np.kron(Ds[l1], Ds[l2]) @ C.T
                rhs = np.zeros_like(lhs)
                pos = 0
                for ell in range(abs(l1 - l2), l1 + l2 + 1):
                    n = 2 * ell + 1
                    rhs[pos:pos + n, pos:pos + n] = Ds[ell]
                    pos += n
                worst = max(worst, np.abs(lhs - rhs).max())
    return worst


@suite("cg_sparsity", "so3_core", 0.0)
def _sparsity(rng):
    bad = 0
    for l1 in range(3):
        for l2 in range(3):
            for ell in range(abs(l1 - l2), l1 + l2 + 1):
                for m1 in range(-l1, l1 + 1):
                    for m2 in range(-l2, l2 + 1):
                        for m in range(-ell, ell + 1):
                            if m != m1 + m2 and so3.cg_coefficient(l1, l2, ell, m1, m2, m) != 0.0:
                                bad += 1
    return float(bad)


# ----------------------------------------------------------------- covariant


def _random_type(rng, lmax=3, tmax=2) -> RepType:
    while True:
        t = RepType(rng.integers(0, tmax + 1, lmax + 1).tolist())
        if t.dim:
            return t


@suite("type_soundness", "covariant", 0.0)
def _type_soundness(rng):
    bad = 0
    for _ in range(10):
        t1, t2 = _random_type(rng), _random_type(rng)
        out = cg_product(CovariantVector.random(t1, rng), CovariantVector.random(t2, rng))
        bad += out.rep_type != kappa(t1, t2)
    return float(bad)


@suite("dimension_conservation", "covariant", 0.0)
def _dimension(rng):
    bad = 0
    for _ in range(10):
        t1, t2 = _random_type(rng), _random_type(rng)
        out = cg_product(CovariantVector.random(t1, rng), CovariantVector.random(t2, rng))
        bad += out.rep_type.dim != t1.dim * t2.dim
    return float(bad)


@suite("norm_preservation", "covariant", 1e-12)
def _norm(rng):
    worst = 0.0
    for _ in range(10):
        a = CovariantVector.random(_random_type(rng), rng)
        b = CovariantVector.random(_random_type(rng), rng)
        na, nb = np.linalg.norm(a.flat()), np.linalg.norm(b.flat())
        nc = np.linalg.norm(cg_product(a, b).flat())
        worst = max(worst, abs(nc - na * nb) / (na * nb))
    return worst


@suite("operation_equivariance", "covariant", 1e-10)
def _op_equivariance(rng):
    worst = 0.0
    for _ in range(5):
        R = so3.random_rotation(rng)
        t1, t2 = _random_type(rng, 2), _random_type(rng, 2)
        a, b = CovariantVector.random(t1, rng), CovariantVector.random(t2, rng)
        worst = max(worst, allclose_error(cg_product(rotate(a, R), rotate(b, R)),
                                          rotate(cg_product(a, b), R)))
        c = CovariantVector.random(t1, rng)
        chain = cg_product_chain([a, b, c], 2)
        worst = max(worst, allclose_error(cg_product_chain([rotate(a, R), rotate(b, R), rotate(c, R)], 2),
                                          rotate(chain, R)))
        worst = max(worst, allclose_error(direct_sum([rotate(a, R), rotate(b, R)]),
                                          rotate(direct_sum([a, b]), R)))
        W = MixWeights.init(t1, _random_type(rng, 2), rng)
        worst = max(worst, allclose_error(mix(rotate(a, R), W), rotate(mix(a, W), R)))
    return worst


def _equivariant_map(in_type, out_type, rng):
    W = MixWeights.init(in_type, out_type, rng)
    return lambda v: mix(v, W)


def _broken_map(in_type, rng):
    M = rng.standard_normal((in_type.dim, in_type.dim)) + 1j * rng.standard_normal((in_type.dim, in_type.dim))
    return lambda v: CovariantVector.from_flat(in_type, M @ v.flat())


@suite("schur_completeness", "covariant", 1e-8)
def _schur(rng):
    t = RepType([2, 2, 1])
    f = _equivariant_map(t, t, rng)
    xs = [CovariantVector.random(t, rng) for _ in range(8)]
    _, res = fit_mix_weights(xs, [f(x) for x in xs], t)
    # the fit must also reject a map that is not of the block form
    g = _broken_map(t, rng)
    _, res_bad = fit_mix_weights(xs, [g(x) for x in xs], t)
    return res if res_bad > 1e-2 else float("inf")


# --------------------------------------------------------------------- gates


def _gate_case(kind, rng, child_type=(1, 1, 1), n=4):
    cfg = gates.GateConfig(kind, RepType([2, 2, 2]), radial_powers=(0, 1, 2), moment_order=2,
                           truncate_ell=2, nonlinearity="ssp", state_channel=True)
    cfg = cfg.init_weights(child_type, rng)
    offsets = rng.normal(size=(n, 3))
    states = CovariantVector.random(child_type, rng, (n,))
    return cfg, offsets, states


@suite("gate_equivariance", "gates", 1e-10)
def _gate_equivariance(rng):
    worst = 0.0
    for kind in gates.KINDS:
        for _ in range(2):
            cfg, off, st = _gate_case(kind, rng)
            R = so3.random_rotation(rng)
            out = gates.evaluate_gate(cfg, off, st)
            rot = gates.evaluate_gate(cfg, off @ R.matrix().T, rotate(st, R))
            worst = max(worst, allclose_error(rot, rotate(out, R)))
    return worst


@suite("gate_translation_invariance", "gates", 1e-12)
def _gate_translation(rng):
    worst = 0.0
    for kind in gates.KINDS:
        cfg, _, st = _gate_case(kind, rng)
        parent, kids = rng.normal(size=3), rng.normal(size=(4, 3))
        shift = rng.normal(size=3) * 10
        children = [(gates.embed_relative_position(parent, k), CovariantVector(
            st.rep_type, {ell: f[i] for ell, f in st.fragments.items()})) for i, k in enumerate(kids)]
        moved = [(gates.embed_relative_position(parent + shift, k + shift), s) for k, (_, s) in zip(kids, children)]
        worst = max(worst, allclose_error(gates.apply_gate(children, cfg), gates.apply_gate(moved, cfg)))
    return worst


@suite("gate_permutation_invariance", "gates", 1e-12)
def _gate_permutation(rng):
    worst = 0.0
    for kind in gates.KINDS:
        cfg, off, st = _gate_case(kind, rng)
        perm = rng.permutation(len(off))
        shuffled = CovariantVector(st.rep_type, {ell: f[perm] for ell, f in st.fragments.items()})
        worst = max(worst, allclose_error(gates.evaluate_gate(cfg, off, st),
                                          gates.evaluate_gate(cfg, off[perm], shuffled)))
    return worst


@suite("gate_type_correctness", "gates", 0.0)
def _gate_types(rng):
    bad = 0
    for kind in gates.KINDS:
        for _ in range(3):
            ct = _random_type(rng, 2)
            cfg = gates.GateConfig(kind, RepType([1, 1, 1]), radial_powers=(0, 2), moment_order=2,
                                   truncate_ell=2, state_channel=bool(rng.integers(2)))
            cfg = cfg.init_weights(ct, rng)
            off = rng.normal(size=(3, 3))
            st = CovariantVector.random(ct, rng, (3,))
            # evaluate_gate asserts the pre-mix type internally
            try:
                out = gates.evaluate_gate(cfg, off, st)
            except AssertionError:
                bad += 1
                continue
            bad += out.rep_type != cfg.output_type
    return float(bad)


@suite("moment_tensor_symmetry", "gates", 0.0)
def _moment_symmetry(rng):
    import itertools
    worst = 0.0
    vecs = rng.normal(size=(5, 3))
    for k in range(1, 5):
        T = gates.moment_tensor(k, vecs).entries
        for perm in itertools.permutations(range(k)):
            worst = max(worst, float(np.abs(T - np.transpose(T, perm)).max()))
    return worst


@suite("radial_homogeneity", "gates", 1e-12)
def _homogeneity(rng):
    cfg = gates.GateConfig("zeroth", RepType([0, 1]), radial_powers=(0,), truncate_ell=1)
    cfg = cfg.init_weights(RepType([1]), rng)
    off = rng.normal(size=(3, 3))
    st = CovariantVector.random(RepType([1]), rng, (3,))
    base = gates.evaluate_gate(cfg, off, st)
    worst = 0.0
    for lam in (0.5, 2.0, 3.7):
        scaled = gates.evaluate_gate(cfg, lam * off, st)
        worst = max(worst, float(np.abs(np.asarray(scaled[1]) - lam * np.asarray(base[1])).max()))
    return worst


# ------------------------------------------------------------------- network


def _spread_system(rng, n=4, min_dist=0.9) -> System:
    pts = []
    while len(pts) < n:
        p = rng.uniform(0, 1.6, 3)
        if all(np.linalg.norm(p - q) >= min_dist for q in pts):
            pts.append(p)
    return System(np.array(pts), [0] * n)


def _small_model(seed, depth=2):
    return Model.init({"depth": depth, "channels": 2, "cutoff": 1.6, "nonlinearity": "ssp",
                       "root_nonlinearity": "ssp"}, seed=seed)


@suite("energy_invariance", "network", 1e-9)
def _energy_invariance(rng):
    worst = 0.0
    for _ in range(4):
        model, sysm = _small_model(int(rng.integers(1 << 30))), _spread_system(rng)
        R = so3.random_rotation(rng).matrix()
        e0 = forward(model, sysm)[0]
        e1 = forward(model, sysm.transformed(R, rng.normal(size=3)))[0]
        worst = max(worst, abs(e1 - e0) / max(abs(e0), 1e-12))
    return worst


@suite("force_equivariance", "network", 1e-8)
def _force_equivariance(rng):
    worst = 0.0
    for _ in range(3):
        model, sysm = _small_model(int(rng.integers(1 << 30))), _spread_system(rng)
        R = so3.random_rotation(rng).matrix()
        f0 = -backward(forward(model, sysm)[1])["positions"]
        f1 = -backward(forward(model, sysm.transformed(R))[1])["positions"]
        scale = max(np.abs(f0).max(), 1e-12)
        worst = max(worst, np.abs(f1 - f0 @ R.T).max() / scale, np.abs(f0.sum(axis=0)).max() / scale)
    return worst


@suite("internal_covariance", "network", 1e-9)
def _internal_covariance(rng):
    worst = 0.0
    for _ in range(3):
        model, sysm = _small_model(int(rng.integers(1 << 30))), _spread_system(rng)
        Re = so3.random_rotation(rng)
        _, t0 = forward(model, sysm)
        _, t1 = forward(model, sysm.transformed(Re.matrix()))
        for a, b in zip(t0.level_states, t1.level_states):
            worst = max(worst, allclose_error(b.numpy(), rotate(a.numpy(), Re)))
    return worst


@suite("determinism", "network", 0.0)
def _determinism(rng):
    seed = int(rng.integers(1 << 30))
    sysm = _spread_system(rng)
    e = [forward(_small_model(seed), sysm)[0] for _ in range(2)]
    return float(e[0] != e[1])


@suite("gradient_check", "network", 1e-5)
def _gradient_check(rng):
    model, sysm = _small_model(int(rng.integers(1 << 30)), depth=1), _spread_system(rng, 3)
    grads = backward(forward(model, sysm)[1])
    params = model.parameters()
    h, worst = 1e-6, 0.0

    def energy_with(name, idx, delta):
        if name == "positions":
            pos = sysm.positions.copy()
            pos[idx] += delta
            return forward(model, System(pos, sysm.species))[0]
        p = {k: np.array(v) for k, v in params.items()}
        p[name][idx] += delta
        return forward(model.with_parameters(p), sysm)[0]

    probes = [("positions", (int(rng.integers(3)), int(rng.integers(3))))]
    for name, v in params.items():
        probes.append((name, tuple(int(rng.integers(s)) for s in v.shape)))
    for name, idx in probes:
        parts = [(1.0, lambda g: g.real)]
        if np.iscomplexobj(params.get(name, np.zeros(0))):
            parts.append((1j, lambda g: g.imag))
        for step, pick in parts:
            fd = (energy_with(name, idx, h * step) - energy_with(name, idx, -h * step)) / (2 * h)
            an = float(pick(np.asarray(grads[name])[idx]))
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3))
    return worst


@suite("scheme_validation", "network", 0.0)
def _scheme_validation(rng):
    bad = 0
    for depth in (1, 2):
        sysm = _spread_system(rng, 5)
        bad += len(validate_scheme(build_scheme(sysm.positions, 1.6, depth)))
    # each negated invariant must be reported
    leaves = [SchemeNode(i, frozenset([i]), 0) for i in range(3)]
    cyclic = CompositionScheme(leaves + [SchemeNode(3, frozenset({0, 1}), 1),
                                         SchemeNode(4, frozenset({0, 1, 2}), 2)],
                               [(0, 3), (1, 3), (3, 4), (2, 4), (4, 3)], 4)
    fat_leaf = CompositionScheme([SchemeNode(0, frozenset({0, 1}), 0), SchemeNode(1, frozenset({0, 1}), 1)],
                                 [(0, 1)], 1)
    two_roots = CompositionScheme(leaves + [SchemeNode(3, frozenset({0, 1}), 1)],
                                  [(0, 3), (1, 3)], 3)
    for d, word in ((cyclic, "cycle"), (fat_leaf, "leaf singleton"), (two_roots, "unique root")):
        bad += not any(word in v for v in validate_scheme(d))
    return float(bad)


# ------------------------------------------------------------------- runner


def run_selftest(tol_scale: float = 1.0, overrides: dict | None = None, seed: int = 0,
                 only=None) -> SelfTestReport:
    """Run every registered suite (or the names in ``only``).

    Float tolerances are multiplied by ``tol_scale``; ``overrides`` maps suite
    names to absolute tolerances.
    """
    overrides = overrides or {}
    unknown = set(overrides) - set(SUITES)
    if unknown:
        raise KeyError(f"unknown suites {sorted(unknown)}")
    report = SelfTestReport()
    for name, (module, tol, fn) in SUITES.items():
        if only and name not in only:
            continue
        tol = overrides.get(name, tol * tol_scale)
        rng = np.random.default_rng([seed, len(report.results)])
        t0 = time.perf_counter()
        detail = ""
        try:
            err = float(fn(rng))
        except Exception as exc:  # a crashing suite is a failing suite
            err, detail = float("inf"), f"{type(exc).__name__}: {exc}"
        ok = bool(np.isfinite(err) and err <= tol)
        report.results.append(SuiteResult(name, module, ok, err, tol, time.perf_counter() - t0, detail))
    return report
