import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from sympy.physics.quantum.cg import CG
from sympy.physics.quantum.spin import Rotation

from cgnet import so3
from cgnet.errors import ArgumentError, CapabilityError, SelectionRuleError

angles = st.tuples(st.floats(0, 2 * math.pi), st.floats(0, math.pi), st.floats(0, 2 * math.pi))


def _rz(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# ------------------------------------------------------------ oracles


def _sympy_cg(l1, l2, l, m1, m2, m):
    return float(CG(l1, m1, l2, m2, l, m).doit())


def _sympy_wigner(l, R):
    return np.array([[complex(sp.N(Rotation.D(l, m, mp, R.alpha, R.beta, R.gamma).doit()))
                      for mp in range(-l, l + 1)] for m in range(-l, l + 1)])


@pytest.mark.parametrize("l1,l2", [(0, 0), (1, 1), (2, 1), (1, 2), (2, 2), (3, 2)])
def test_cg_matches_sympy(l1, l2):
    worst = 0.0
    for l in range(abs(l1 - l2), l1 + l2 + 1):
        for m1 in range(-l1, l1 + 1):
            for m2 in range(-l2, l2 + 1):
                m = m1 + m2
                if abs(m) <= l:
                    worst = max(worst, abs(so3.cg_coefficient(l1, l2, l, m1, m2, m)
                                           - _sympy_cg(l1, l2, l, m1, m2, m)))
    assert worst < 1e-15


@pytest.mark.parametrize("l", [1, 2, 3])
def test_wigner_matches_sympy(l):
    R = so3.EulerAngles(0.3, 1.1, 2.5)
    assert np.abs(so3.wigner_d(l, R) - _sympy_wigner(l, R)).max() < 1e-13


# ------------------------------------------------------------ wigner_d


def test_wigner_l0_is_one():
    R = so3.random_rotation(3)
    np.testing.assert_array_equal(so3.wigner_d(0, R), np.ones((1, 1)))


@pytest.mark.parametrize("l", range(0, 9))
def test_wigner_identity(l):
    np.testing.assert_allclose(so3.wigner_d(l, so3.EulerAngles.identity()), np.eye(2 * l + 1), atol=1e-15)


def test_wigner_quarter_turn_about_z():
    U = so3.cartesian_to_spherical_basis()
    Rc = _rz(math.pi / 2)
    R = so3.EulerAngles.from_matrix(Rc)
    assert np.abs(so3.wigner_d(1, R) - U @ Rc @ U.conj().T).max() < 1e-12


def test_wigner_beyond_limit():
    with pytest.raises(CapabilityError):
        so3.wigner_d(so3.L_CG + 1, so3.EulerAngles.identity())


@settings(max_examples=40, deadline=None)
@given(angles, angles, st.integers(0, 8))
def test_wigner_homomorphism_and_unitarity(a1, a2, l):
    R1, R2 = so3.EulerAngles(*a1), so3.EulerAngles(*a2)
    D1, D2 = so3.wigner_d(l, R1), so3.wigner_d(l, R2)
    assert np.abs(D1 @ D1.conj().T - np.eye(2 * l + 1)).max() < 1e-12
    assert abs(abs(np.linalg.det(D1)) - 1) < 1e-12
    assert np.abs(D1 @ D2 - so3.wigner_d(l, R1.compose(R2))).max() < 1e-10


# --------------------------------------------------------- Euler angles


@settings(max_examples=60, deadline=None)
@given(angles)
def test_euler_round_trip(a):
    R = so3.EulerAngles(*a)
    back = so3.EulerAngles.from_matrix(R.matrix())
    assert np.abs(back.matrix() - R.matrix()).max() < 1e-12
    assert 0 <= back.alpha < 2 * math.pi and 0 <= back.gamma < 2 * math.pi
    assert 0 <= back.beta <= math.pi


@pytest.mark.parametrize("beta", [0.0, math.pi])
def test_gimbal_convention(beta):
    R = so3.EulerAngles(0.4, beta, 1.3)
    back = so3.EulerAngles.from_matrix(R.matrix())
    assert back.gamma == 0.0
    assert np.abs(back.matrix() - R.matrix()).max() < 1e-12


def test_compose_and_inverse():
    R1, R2 = so3.random_rotation(1), so3.random_rotation(2)
    np.testing.assert_allclose(R1.compose(R2).matrix(), R1.matrix() @ R2.matrix(), atol=1e-12)
    np.testing.assert_allclose(R1.compose(R1.inverse()).matrix(), np.eye(3), atol=1e-12)


# ------------------------------------------------------ spherical basis


def test_basis_change_unitary_and_ez():
    U = so3.cartesian_to_spherical_basis()
    np.testing.assert_allclose(U @ U.conj().T, np.eye(3), atol=1e-15)
    v = U @ np.array([0.0, 0.0, 1.0])
    assert abs(v[1]) == pytest.approx(1.0) and abs(v[0]) == 0 and abs(v[2]) == 0


def test_basis_change_intertwines():
    U = so3.cartesian_to_spherical_basis()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        R = so3.random_rotation(rng)
        worst = max(worst, np.abs(so3.wigner_d(1, R) @ U - U @ R.matrix()).max())
    assert worst < 1e-12


# ------------------------------------------------------------- CG


def test_cg_selection_rules():
    for m in range(-3, 4):
        assert so3.cg_coefficient(1, 1, 3, 0, 0, m) == 0.0
    assert so3.cg_coefficient(1, 1, 2, 1, 1, 0) == 0.0


@pytest.mark.parametrize("l", [0, 1, 2, 5])
def test_cg_scalar_coupling_is_identity(l):
    for m in range(-l, l + 1):
        assert so3.cg_coefficient(0, l, l, 0, m, m) == pytest.approx(1.0, abs=1e-15)


def test_cg_singlet():
    for m in (-1, 0, 1):
        expect = (-1) ** (1 - m) / math.sqrt(3)
        assert so3.cg_coefficient(1, 1, 0, m, -m, 0) == pytest.approx(expect, abs=1e-15)


def test_cg_bad_magnetic_index():
    with pytest.raises(ArgumentError):
        so3.cg_coefficient(1, 1, 1, 2, 0, 2)


def test_cg_block_shape_and_errors():
    assert so3.cg_block(2, 1, 1).shape == (3, 15)
    with pytest.raises(SelectionRuleError):
        so3.cg_block(1, 1, 3)


def test_cg_block_layout():
    B = so3.cg_block(2, 1, 2)
    for m in range(-2, 3):
        for m1 in range(-2, 3):
            for m2 in range(-1, 2):
                assert B[m + 2, (m1 + 2) * 3 + (m2 + 1)] == so3.cg_coefficient(2, 1, 2, m1, m2, m)


@pytest.mark.parametrize("l1,l2", [(l1, l2) for l1 in range(5) for l2 in range(5)])
def test_cg_stack_orthogonal(l1, l2):
    C = so3.cg_matrix(l1, l2)
    n = (2 * l1 + 1) * (2 * l2 + 1)
    assert C.shape == (n, n)
    assert np.abs(C @ C.T - np.eye(n)).max() < 1e-12


@pytest.mark.parametrize("l1,l2", [(1, 1), (2, 1), (2, 2), (3, 1)])
def test_block_diagonalization(l1, l2):
    rng = np.random.default_rng(l1 * 10 + l2)
    C = so3.cg_matrix(l1, l2)
    for _ in range(5):
        R = so3.random_rotation(rng)
        lhs = C @ np.kron(so3.wigner_d(l1, R), so3.wigner_d(l2, R)) @ C.T
        pos = 0
        for l in range(abs(l1 - l2), l1 + l2 + 1):
            n = 2 * l + 1
            assert np.abs(lhs[pos:pos + n, pos:pos + n] - so3.wigner_d(l, R)).max() < 1e-10
            off = np.delete(lhs[pos:pos + n], np.s_[pos:pos + n], axis=1)
            assert np.abs(off).max(initial=0) < 1e-10
            pos += n


def test_perturbed_cg_hook_restores():
    before = so3.cg_block(1, 1, 1).copy()
    with so3.perturbed_cg(1, 1, 1, 0, 1, 1e-3):
        assert so3.cg_block(1, 1, 1)[0, 1] == pytest.approx(before[0, 1] + 1e-3)
    np.testing.assert_array_equal(so3.cg_block(1, 1, 1), before)


def test_dump_cg_records():
    recs = so3.dump_cg(1)
    assert [(r["l1"], r["l2"], r["l"]) for r in recs] == [
        (0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1, 1), (1, 1, 2)]
    assert np.allclose(recs[3]["rows"], so3.cg_block(1, 1, 0))


# --------------------------------------------------------- sampling


def test_random_rotation_deterministic_and_distinct():
    a, b = so3.random_rotation(7), so3.random_rotation(7)
    assert a == b
    assert so3.random_rotation(8) != a


def test_haar_cos_beta_mean():
    rng = np.random.default_rng(12345)
    cos_b = np.array([math.cos(so3.random_rotation(rng).beta) for _ in range(100_000)])
    assert abs(cos_b.mean()) < 0.01
    # sin(beta)/2 density means cos(beta) is uniform on [-1, 1]
    assert abs(np.mean(cos_b ** 2) - 1 / 3) < 0.01


def test_irrep_dim():
    assert [so3.irrep_dim(l) for l in range(4)] == [1, 3, 5, 7]
