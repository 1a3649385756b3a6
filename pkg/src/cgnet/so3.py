"""SO(3) representation kernel.

Conventions used throughout the package:

* Rotations are active, ``R(alpha, beta, gamma) = Rz(alpha) @ Ry(beta) @ Rz(gamma)``.
* ``D^l_{m,m'}(alpha, beta, gamma) = exp(-i m alpha) d^l_{m,m'}(beta) exp(-i m' gamma)``
  with rows/columns ordered ``m = -l, ..., l``.
* Clebsch-Gordan coefficients follow Condon-Shortley and are real.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np

from .errors import ArgumentError, CapabilityError, SelectionRuleError

# Largest l for which D-matrices and CG blocks are served.
L_CG = 8

_TWO_PI = 2.0 * math.pi
_GIMBAL_EPS = 1e-15


def set_max_ell(lmax: int) -> None:
    """Change the table limit ``L_CG``. Cached blocks stay valid."""
    global L_CG
    if lmax < 0:
        raise ArgumentError("lmax must be non-negative")
    L_CG = int(lmax)


def irrep_dim(ell: int) -> int:
    return 2 * ell + 1


def _check_ell(ell: int) -> None:
    if ell < 0:
        raise ArgumentError(f"angular momentum must be non-negative, got {ell}")
    if ell > L_CG:
        raise CapabilityError(f"l={ell} exceeds table limit L_CG={L_CG}")


def _rz(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class EulerAngles:
    """ZYZ Euler angles in radians."""

    alpha: float
    beta: float
    gamma: float

    def matrix(self) -> np.ndarray:
        """The 3x3 Cartesian rotation matrix."""
        return _rz(self.alpha) @ _ry(self.beta) @ _rz(self.gamma)

    @classmethod
    def identity(cls) -> "EulerAngles":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, R) -> "EulerAngles":
        R = np.asarray(R, dtype=float)
        if R.shape != (3, 3):
            raise ArgumentError(f"expected a 3x3 matrix, got shape {R.shape}")
        sb = math.hypot(R[0, 2], R[1, 2])
        beta = math.atan2(sb, R[2, 2])
        if sb < _GIMBAL_EPS:
            # gimbal lock: gamma = 0, whole z-rotation goes into alpha
            if R[2, 2] > 0:
                alpha = math.atan2(R[1, 0], R[0, 0])
            else:
                alpha = math.atan2(-R[0, 1], -R[0, 0])
            gamma = 0.0
        else:
            alpha = math.atan2(R[1, 2], R[0, 2])
            gamma = math.atan2(R[2, 1], -R[2, 0])
        return cls(alpha % _TWO_PI, beta, gamma % _TWO_PI)

    def compose(self, other: "EulerAngles") -> "EulerAngles":
        """``self o other``: apply ``other`` first, then ``self``."""
        return EulerAngles.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "EulerAngles":
        return EulerAngles.from_matrix(self.matrix().T)


def random_rotation(seed) -> EulerAngles:
    """Haar-distributed rotation, deterministic in ``seed``.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is advanced).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alpha, u, gamma = rng.random(3)
    # cos(beta) uniform on [-1, 1] gives the sin(beta)/2 marginal
    beta = math.acos(1.0 - 2.0 * u)
    return EulerAngles(_TWO_PI * alpha, beta, _TWO_PI * gamma)


# --------------------------------------------------------------------------
# Wigner D-matrices


class _OnceCache:
    """Dict cache with at-most-once construction per key."""

    def __init__(self, build):
        self._build = build
        self._data: dict = {}
        self._lock = threading.Lock()

    def get(self, key):
        try:
            return self._data[key]
        except KeyError:
            pass
        with self._lock:
            if key not in self._data:
                self._data[key] = self._build(*key)
            return self._data[key]

    def override(self, key, value):
        with self._lock:
            self._data[key] = value

    def discard(self, key):
        with self._lock:
            self._data.pop(key, None)


def _little_d_terms(ell: int):
    """Wigner sum terms as (row, col, coeff, cos_power, sin_power) arrays."""
    f = math.factorial
    rows, cols, coef, pc, ps = [], [], [], [], []
    for m in range(-ell, ell + 1):
        for mp in range(-ell, ell + 1):
            pref = math.sqrt(f(ell + m) * f(ell - m) * f(ell + mp) * f(ell - mp))
            for s in range(max(0, mp - m), min(ell + mp, ell - m) + 1):
                den = f(ell + mp - s) * f(s) * f(m - mp + s) * f(ell - m - s)
                rows.append(m + ell)
                cols.append(mp + ell)
                coef.append((-1) ** (m - mp + s) * pref / den)
                pc.append(2 * ell + mp - m - 2 * s)
                ps.append(m - mp + 2 * s)
    return (np.array(rows), np.array(cols), np.array(coef),
            np.array(pc, dtype=float), np.array(ps, dtype=float))


_D_TERMS = _OnceCache(_little_d_terms)


def little_d(ell: int, beta: float) -> np.ndarray:
    """Real Wigner small-d matrix ``d^l(beta)``."""
    _check_ell(ell)
    rows, cols, coef, pc, ps = _D_TERMS.get((ell,))
    c, s = math.cos(beta / 2.0), math.sin(beta / 2.0)
    vals = coef * np.power(c, pc) * np.power(s, ps)
    n = 2 * ell + 1
    out = np.zeros(n * n)
    np.add.at(out, rows * n + cols, vals)
    return out.reshape(n, n)


def wigner_d(ell: int, R: EulerAngles) -> np.ndarray:
    """Unitary irrep ``D^l(R)`` of shape (2l+1, 2l+1)."""
    _check_ell(ell)
    m = np.arange(-ell, ell + 1)
    d = little_d(ell, R.beta)
    return np.exp(-1j * m * R.alpha)[:, None] * d * np.exp(-1j * m * R.gamma)[None, :]


_SQRT_HALF = math.sqrt(0.5)
_U = np.array(
    [
        [_SQRT_HALF, 1j * _SQRT_HALF, 0.0],   # m = -1
        [0.0, 0.0, 1.0],                      # m = 0
        [-_SQRT_HALF, 1j * _SQRT_HALF, 0.0],  # m = +1
    ],
    dtype=complex,
)
_U.setflags(write=False)


def cartesian_to_spherical_basis() -> np.ndarray:
    """Unitary ``U`` with ``D^1(R) @ U == U @ R.matrix()``.

    Row order is ``m = -1, 0, +1``.
    """
    return _U.copy()


# --------------------------------------------------------------------------
# Clebsch-Gordan coefficients


def _fact(n: int) -> int:
    return math.factorial(n)


def _cg_exact(j1: int, m1: int, j2: int, m2: int, j: int, m: int) -> float:
    if m != m1 + m2 or not abs(j1 - j2) <= j <= j1 + j2:
        return 0.0
    pref = Fraction(
        (2 * j + 1) * _fact(j + j1 - j2) * _fact(j - j1 + j2) * _fact(j1 + j2 - j),
        _fact(j1 + j2 + j + 1),
    ) * (_fact(j + m) * _fact(j - m) * _fact(j1 - m1) * _fact(j1 + m1)
         * _fact(j2 - m2) * _fact(j2 + m2))
    total = Fraction(0)
    kmin = max(0, j2 - j - m1, j1 + m2 - j)
    kmax = min(j1 + j2 - j, j1 - m1, j2 + m2)
    for k in range(kmin, kmax + 1):
        den = (_fact(k) * _fact(j1 + j2 - j - k) * _fact(j1 - m1 - k)
               * _fact(j2 + m2 - k) * _fact(j - j2 + m1 + k) * _fact(j - j1 - m2 + k))
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    sq = total * total * pref
    with localcontext() as ctx:
        ctx.prec = 40
        mag = (Decimal(sq.numerator) / Decimal(sq.denominator)).sqrt()
    return float(mag) if total > 0 else -float(mag)


def cg_coefficient(ell1: int, ell2: int, ell: int, m1: int, m2: int, m: int) -> float:
    """``<l1 m1; l2 m2 | l m>`` (Condon-Shortley)."""
    for lv, mv in ((ell1, m1), (ell2, m2), (ell, m)):
        if lv < 0 or abs(mv) > lv:
            raise ArgumentError(f"magnetic index {mv} out of range for l={lv}")
    return _cg_exact(ell1, m1, ell2, m2, ell, m)


def _build_block(ell1: int, ell2: int, ell: int) -> np.ndarray:
    n1, n2 = 2 * ell1 + 1, 2 * ell2 + 1
    block = np.zeros((2 * ell + 1, n1 * n2))
    for a, m1 in enumerate(range(-ell1, ell1 + 1)):
        for b, m2 in enumerate(range(-ell2, ell2 + 1)):
            m = m1 + m2
            if abs(m) <= ell:
                block[m + ell, a * n2 + b] = _cg_exact(ell1, m1, ell2, m2, ell, m)
    block.setflags(write=False)
    return block


_CG_BLOCKS = _OnceCache(_build_block)


def _check_triangle(ell1: int, ell2: int, ell: int) -> None:
    for lv in (ell1, ell2, ell):
        _check_ell(lv)
    if not abs(ell1 - ell2) <= ell <= ell1 + ell2:
        raise SelectionRuleError(f"l={ell} not in [|{ell1}-{ell2}|, {ell1}+{ell2}]")


def cg_block(ell1: int, ell2: int, ell: int) -> np.ndarray:
    """Real block ``C_{l1,l2,l}`` of shape (2l+1, (2l1+1)(2l2+1)).

    Column index is ``(m1 + l1) * (2 l2 + 1) + (m2 + l2)``, i.e. m2 fastest.
    The returned array is read-only and shared.
    """
    _check_triangle(ell1, ell2, ell)
    return _CG_BLOCKS.get((ell1, ell2, ell))


def cg_tensor(ell1: int, ell2: int, ell: int) -> np.ndarray:
    """The block reshaped to ``C[m, m1, m2]``."""
    return cg_block(ell1, ell2, ell).reshape(2 * ell + 1, 2 * ell1 + 1, 2 * ell2 + 1)


def cg_matrix(ell1: int, ell2: int) -> np.ndarray:
    """All admissible blocks stacked by increasing l: the square matrix ``C_{l1,l2}``."""
    return np.vstack([cg_block(ell1, ell2, ell)
                      for ell in range(abs(ell1 - ell2), ell1 + ell2 + 1)])


@contextlib.contextmanager
def perturbed_cg(ell1: int, ell2: int, ell: int, row: int, col: int, delta: float):
    """Test hook: temporarily add ``delta`` to one entry of a cached CG block."""
    key = (ell1, ell2, ell)
    original = cg_block(ell1, ell2, ell)
    bad = original.copy()
    bad[row, col] += delta
    bad.setflags(write=False)
    _CG_BLOCKS.override(key, bad)
    try:
        yield
    finally:
        _CG_BLOCKS.override(key, original)


def dump_cg(lmax: int) -> list[dict]:
    """All blocks with ``l1, l2 <= lmax`` as JSON-ready records."""
    records = []
    for l1 in range(lmax + 1):
        for l2 in range(lmax + 1):
            for ell in range(abs(l1 - l2), l1 + l2 + 1):
                records.append({"l1": l1, "l2": l2, "l": ell,
                                "rows": cg_block(l1, l2, ell).tolist()})
    return records
