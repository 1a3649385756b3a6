"""Synthetic pair-potential datasets and JSON-lines dataset IO."""

from __future__ import annotations

import json

import numpy as np

from .errors import ArgumentError, CGNetError
from .network import System

POTENTIALS = ("lennard_jones", "harmonic")


def lennard_jones(r, epsilon: float = 1.0, sigma: float = 1.0):
    sr6 = (sigma / np.asarray(r, dtype=float)) ** 6
    return 4.0 * epsilon * (sr6 * sr6 - sr6)


def harmonic(r, k: float = 1.0, r0: float = 1.0):
    return 0.5 * k * (np.asarray(r, dtype=float) - r0) ** 2


def pair_energy(positions, potential: str = "lennard_jones", **params) -> float:
    """``sum_{i<j} V(|r_i - r_j|)``."""
    pos = np.asarray(positions, dtype=float)
    if potential == "lennard_jones":
        v = lennard_jones
    elif potential == "harmonic":
        v = harmonic
    else:
        raise ArgumentError(f"unknown potential {potential!r}; expected one of {POTENTIALS}")
    i, j = np.triu_indices(len(pos), k=1)
    if not len(i):
        return 0.0
    r = np.linalg.norm(pos[i] - pos[j], axis=1)
    return float(np.sum(v(r, **params)))


def _sample_positions(rng, n_atoms, box, min_dist, max_tries):
    for _ in range(max_tries):
        pts = []
        for _ in range(max_tries):
            p = rng.uniform(0.0, box, 3)
            if all(np.linalg.norm(p - q) >= min_dist for q in pts):
                pts.append(p)
                if len(pts) == n_atoms:
                    return np.array(pts)
        # too crowded: restart this system
    raise CGNetError(f"could not place {n_atoms} atoms in box {box} with min distance {min_dist}")


def gen_dataset(n: int, atoms_per_system=(2, 6), seed: int = 0, potential: str = "lennard_jones",
                box_per_atom: float = 1.5, min_dist: float = 0.95, n_species: int = 1,
                max_tries: int = 200, **params) -> list[System]:
    """Random systems labelled with a closed-form pair potential.

    Atoms are placed uniformly in a cube of side ``box_per_atom * n_atoms ** (1/3)``
    with rejection of any pair closer than ``min_dist``.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    lo, hi = atoms_per_system
    if not 1 <= lo <= hi:
        raise ArgumentError(f"bad atom range {atoms_per_system}")
    if potential not in POTENTIALS:
        raise ArgumentError(f"unknown potential {potential!r}; expected one of {POTENTIALS}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(lo, hi + 1))
        box = box_per_atom * k ** (1.0 / 3.0)
        pos = _sample_positions(rng, k, box, min_dist, max_tries)
        pos -= pos.mean(axis=0)
        species = rng.integers(0, n_species, k).tolist()
        out.append(System(pos, species, pair_energy(pos, potential, **params)))
    return out


def write_dataset(systems, path) -> None:
    with open(path, "w") as fh:
        for s in systems:
            fh.write(json.dumps(s.to_json()) + "\n")


def read_dataset(path) -> list[System]:
    systems = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                systems.append(System.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ArgumentError(f"{path}:{lineno}: {exc}") from exc
    return systems
