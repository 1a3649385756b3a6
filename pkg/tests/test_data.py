import json
import math

import numpy as np
import pytest

from cgnet import so3
from cgnet.data import gen_dataset, harmonic, lennard_jones, pair_energy, read_dataset, write_dataset
from cgnet.errors import ArgumentError, CGNetError


def _relabel(positions, potential):
    # independent double loop over pairs
    e = 0.0
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            r = math.dist(positions[i], positions[j])
            e += 4 * (r ** -12 - r ** -6) if potential == "lennard_jones" else 0.5 * (r - 1.0) ** 2
    return e


def test_lj_dimer_minimum():
    r = 2 ** (1 / 6)
    assert pair_energy([[0, 0, 0], [0, 0, r]]) == pytest.approx(-1.0, abs=1e-14)
    assert lennard_jones(1.0) == 0.0


def test_harmonic_dimer_at_rest_length():
    assert pair_energy([[0, 0, 0], [1.0, 0, 0]], "harmonic") == 0.0
    assert harmonic(2.0, k=3.0) == pytest.approx(1.5)


@pytest.mark.parametrize("potential", ["lennard_jones", "harmonic"])
def test_labels_match_reevaluation(potential):
    for s in gen_dataset(40, seed=3, potential=potential):
        assert abs(s.target_energy - _relabel(s.positions, potential)) <= 1e-12 * max(1.0, abs(s.target_energy))


def test_labels_invariant_under_rotation():
    R = so3.random_rotation(1).matrix()
    for s in gen_dataset(20, seed=4):
        assert pair_energy(s.positions @ R.T) == pytest.approx(s.target_energy, rel=1e-12, abs=1e-12)


def test_minimum_distance_and_sizes():
    ds = gen_dataset(30, (3, 5), seed=5)
    for s in ds:
        assert 3 <= len(s.species) <= 5
        d = np.linalg.norm(s.positions[:, None] - s.positions[None], axis=-1)
        assert d[np.triu_indices(len(d), 1)].min() >= 0.95


def test_deterministic_per_seed():
    a, b, c = gen_dataset(5, seed=7), gen_dataset(5, seed=7), gen_dataset(5, seed=8)
    assert [s.to_json() for s in a] == [s.to_json() for s in b]
    assert [s.to_json() for s in a] != [s.to_json() for s in c]


def test_dataset_file_round_trip(tmp_path):
    ds = gen_dataset(6, seed=2, n_species=2)
    path = tmp_path / "d.jsonl"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert [s.to_json() for s in back] == [s.to_json() for s in ds]
    assert set(json.loads(path.read_text().splitlines()[0])) >= {"positions", "species", "energy"}


def test_bad_line_reports_location(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"positions": [[0,0,0]], "species": [0], "energy": 0}\n{"positions": \n')
    with pytest.raises(ArgumentError, match=":2:"):
        read_dataset(path)


def test_argument_errors():
    with pytest.raises(ArgumentError):
        gen_dataset(0)
    with pytest.raises(ArgumentError):
        gen_dataset(2, (3, 2))
    with pytest.raises(ArgumentError):
        gen_dataset(2, potential="morse")
    with pytest.raises(ArgumentError):
        pair_energy([[0, 0, 0], [1, 0, 0]], "morse")


def test_rejection_sampling_gives_up():
    with pytest.raises(CGNetError):
        gen_dataset(1, (6, 6), box_per_atom=0.3, min_dist=1.0, max_tries=20)
