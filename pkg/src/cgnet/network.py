"""N-body network: model parameters, forward pass on a tape, gradients, forces, training."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .covariant import CovariantVector, MixWeights, RepType, invariant_part
from .errors import ArgumentError, TrainingError
from .gates import GateConfig, evaluate_gate, gate_output_type
from .scheme import CompositionScheme, build_scheme

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

DEFAULT_HYPER = {
    "channels": 4,
    "depth": 1,
    "cutoff": 1.6,
    "truncate_ell": 2,
    "n_species": 1,
    "hidden_kind": "moment",
    "root_kind": "zeroth",
    "moment_order": 2,
    "radial_powers": [0, 1, 2],
    "root_radial_powers": [0, 1, 2],
    "nonlinearity": None,
    "root_nonlinearity": None,
    "state_channel": True,
    "init_seed": 0,
}


@dataclass
class System:
    positions: np.ndarray
    species: list
    target_energy: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.species = [int(s) for s in self.species]
        if len(self.species) != len(self.positions):
            raise ArgumentError(
                f"{len(self.positions)} positions but {len(self.species)} species")

    def to_json(self) -> dict:
        doc = {"positions": self.positions.tolist(), "species": list(self.species)}
        if self.target_energy is not None:
            doc["energy"] = float(self.target_energy)
        return doc

    @classmethod
    def from_json(cls, doc) -> "System":
        return cls(doc["positions"], doc["species"], doc.get("energy"))

    def transformed(self, rotation=None, shift=None) -> "System":
        pos = self.positions
        if rotation is not None:
            pos = pos @ np.asarray(rotation).T
        if shift is not None:
            pos = pos + np.asarray(shift)
        return System(pos, self.species, self.target_energy)


def _to_pairs(arr) -> list:
    arr = np.asarray(arr)
    if arr.ndim == 0:
        return [float(arr.real), float(arr.imag)]
    return [_to_pairs(a) for a in arr]


def _from_pairs(doc) -> np.ndarray:
    a = np.asarray(doc, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


@dataclass
class Model:
    """Leaf embeddings, one gate per level (root last) and a real readout."""

    hyper: dict
    embedding: np.ndarray           # (n_species, channels) complex, l = 0 only
    gates: list[GateConfig]
    readout: np.ndarray             # (2 * root tau_0,) real

    @property
    def leaf_type(self) -> RepType:
        return RepType([self.embedding.shape[1]])

    def check(self) -> None:
        """Adjacent levels must be type compatible."""
        t = self.leaf_type
        for k, g in enumerate(self.gates):
            if g.weights is None:
                raise ArgumentError(f"gate {k} has no weights")
            pre = gate_output_type(t, None, g)
            if pre != g.weights.in_type:
                raise ArgumentError(f"gate {k} expects input {g.weights.in_type}, levels give {pre}")
            t = g.output_type
        if self.readout.shape != (2 * t[0],):
            raise ArgumentError(f"readout needs {2 * t[0]} weights, has {self.readout.shape}")

    @classmethod
    def init(cls, hyper: dict | None = None, seed: int | None = None) -> "Model":
        h = dict(DEFAULT_HYPER)
        if hyper:
            unknown = set(hyper) - set(DEFAULT_HYPER)
            if unknown:
                raise ArgumentError(f"unknown hyperparameters {sorted(unknown)}")
            h.update(hyper)
        if seed is not None:
            h["init_seed"] = seed
        rng = np.random.default_rng(h["init_seed"])
        c, T = int(h["channels"]), int(h["truncate_ell"])
        hidden = RepType([c] * (T + 1))
        emb = rng.uniform(-1, 1, (h["n_species"], c)) + 1j * rng.uniform(-1, 1, (h["n_species"], c))
        gates = []
        child = RepType([c])
        for k in range(int(h["depth"]) + 1):
            root = k == int(h["depth"])
            cfg = GateConfig(
                kind=h["root_kind"] if root else h["hidden_kind"],
                output_type=RepType([c]) if root else hidden,
                radial_powers=tuple(h["root_radial_powers"] if root else h["radial_powers"]),
                moment_order=int(h["moment_order"]),
                truncate_ell=T,
                nonlinearity=h["root_nonlinearity"] if root else h["nonlinearity"],
                state_channel=bool(h["state_channel"]),
            ).init_weights(child, rng)
            gates.append(cfg)
            child = cfg.output_type
        a = 1.0 / math.sqrt(2 * c)
        readout = rng.uniform(-a, a, 2 * c)
        model = cls(h, emb, gates, readout)
        model.check()
        return model

    # ------------------------------------------------------------ parameters

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"embedding": self.embedding, "readout": self.readout}
        for k, g in enumerate(self.gates):
            for ell, w in g.weights.matrices.items():
                params[f"gate{k}.W{ell}"] = np.asarray(w)
        return params

    def with_parameters(self, params: dict) -> "Model":
        gates = []
        for k, g in enumerate(self.gates):
            mats = {ell: np.array(params[f"gate{k}.W{ell}"]) for ell in g.weights.matrices}
            gates.append(replace(g, weights=MixWeights(g.weights.in_type, g.weights.out_type, mats)))
        return Model(dict(self.hyper), np.array(params["embedding"]), gates,
                     np.array(params["readout"], dtype=float))

    def n_parameters(self) -> int:
        """Real parameter count (complex entries count twice)."""
        return sum(p.size * (2 if np.iscomplexobj(p) else 1) for p in self.parameters().values())

    # ----------------------------------------------------------- checkpoints

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "hyperparameters": self.hyper,
            "gates": [g.to_json() for g in self.gates],
            "leaf_embedding": _to_pairs(self.embedding),
            "readout": self.readout.tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> "Model":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ArgumentError(f"unsupported checkpoint format {doc.get('format_version')!r}")
        model = cls(dict(doc["hyperparameters"]), _from_pairs(doc["leaf_embedding"]),
                    [GateConfig.from_json(g) for g in doc["gates"]],
                    np.array(doc["readout"], dtype=float))
        model.check()
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Model":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ------------------------------------------------------------------ forward


class GradientTape(ad.Tape):
    """Tape of one forward pass plus the handles needed to read it back."""

    def __init__(self):
        super().__init__()
        self.energy: ad.Tensor | None = None
        self.scheme: CompositionScheme | None = None
        self.level_states: list[CovariantVector] = []
        self.level_positions: list = []


def _level_layout(scheme: CompositionScheme, n_atoms: int):
    """Per level: node parts, averaging matrix, and edges (child_idx, parent_idx)."""
    levels = scheme.levels()
    index = {}
    for lv in levels:
        for i, node in enumerate(lv):
            index[node.id] = i
    avg = []
    for lv in levels:
        A = np.zeros((len(lv), n_atoms))
        for i, node in enumerate(lv):
            A[i, sorted(node.part)] = 1.0 / len(node.part)
        avg.append(A)
    edges = [[] for _ in levels]
    level_of = {node.id: k for k, lv in enumerate(levels) for node in lv}
    for c, p in scheme.edges:
        kp = level_of[p]
        if level_of[c] != kp - 1:
            raise ArgumentError("network evaluation needs edges between adjacent levels")
        edges[kp].append((index[c], index[p]))
    return levels, avg, edges


def forward(model: Model, system: System, scheme: CompositionScheme | None = None):
    """Energy of ``system`` and the tape that produced it."""
    h = model.hyper
    n = len(system.positions)
    if n == 0:
        raise ArgumentError("system has no atoms")
    if max(system.species) >= model.embedding.shape[0] or min(system.species) < 0:
        raise ArgumentError(f"species {system.species} outside [0, {model.embedding.shape[0]})")
    if scheme is None:
        scheme = build_scheme(system.positions, h["cutoff"], h["depth"])
    levels, avg, edges = _level_layout(scheme, n)
    if len(levels) != len(model.gates) + 1:
        raise ArgumentError(f"scheme has {len(levels)} levels, model has {len(model.gates)} gates")

    tape = GradientTape()
    tape.scheme = scheme
    pos = tape.leaf(system.positions, "positions")
    emb = tape.leaf(model.embedding, "embedding")
    readout = tape.leaf(model.readout, "readout")
    gates = []
    for k, g in enumerate(model.gates):
        mats = {ell: tape.leaf(w, f"gate{k}.W{ell}") for ell, w in g.weights.matrices.items()}
        gates.append(replace(g, weights=MixWeights(g.weights.in_type, g.weights.out_type, mats)))

    leaf_ids = [node.id for node in levels[0]]
    species = np.array([system.species[next(iter(scheme.node(i).part))] for i in leaf_ids])
    c = model.embedding.shape[1]
    states = CovariantVector(RepType([c]), {0: ad.reshape(ad.getitem(emb, species), (len(species), 1, c))})
    cent = ad.matmul(avg[0], pos)
    tape.level_states.append(states)
    tape.level_positions.append(cent)

    for k in range(1, len(levels)):
        child_idx = np.array([e[0] for e in edges[k]], dtype=int)
        parent_idx = np.array([e[1] for e in edges[k]], dtype=int)
        parent_cent = ad.matmul(avg[k], pos)
        offsets = ad.getitem(cent, child_idx) - ad.getitem(parent_cent, parent_idx)
        anchored = np.array([levels[k - 1][a].part == levels[k][b].part for a, b in edges[k]], dtype=bool)
        child_states = CovariantVector(states.rep_type,
                                       {ell: ad.getitem(f, child_idx) for ell, f in states.fragments.items()})
        part_ids = {}
        keys = np.array([part_ids.setdefault(levels[k - 1][a].part, len(part_ids)) for a in child_idx])
        states = evaluate_gate(gates[k - 1], offsets, child_states, anchored,
                               parent=parent_idx, n_parents=len(levels[k]), child_keys=keys)
        cent = parent_cent
        tape.level_states.append(states)
        tape.level_positions.append(cent)

    scalars = ad.getitem(invariant_part(states), 0)
    feats = ad.concatenate([ad.real(scalars), ad.imag(scalars)], axis=0)
    tape.energy = ad.einsum("f,f->", readout, feats)
    return float(tape.energy.value), tape


def backward(tape: GradientTape, loss_adjoint: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of ``loss_adjoint * energy`` for every parameter and the positions."""
    return tape.backward(tape.energy, loss_adjoint)


def forces(model: Model, system: System) -> np.ndarray:
    """``-dE/dr_i`` for each atom, shape (n, 3)."""
    _, tape = forward(model, system)
    return -backward(tape, 1.0)["positions"]


def energy(model: Model, system: System) -> float:
    return forward(model, system)[0]


# ----------------------------------------------------------------- training


@dataclass
class TrainOptions:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 10
    epochs: int = 10
    seed: int = 0
    grad_clip: float | None = None
    max_seconds: float | None = None  # stop after the first epoch that ends past this budget


@dataclass
class EpochMetrics:
    epoch: int
    train_rmse: float
    holdout_rmse: float | None
    wall_seconds: float
    extra: dict = field(default_factory=dict)


def rmse(model: Model, dataset) -> float:
    errs = [forward(model, s)[0] - s.target_energy for s in dataset]
    return float(np.sqrt(np.mean(np.square(errs)))) if errs else float("nan")


def _batch_gradient(model: Model, batch):
    grads = None
    loss = 0.0
    for s in batch:
        e, tape = forward(model, s)
        err = e - s.target_energy
        loss += err * err / len(batch)
        g = backward(tape, 2.0 * err / len(batch))
        g.pop("positions")
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] = grads[k] + g[k]
    return loss, grads


def train(model: Model, dataset, opts: TrainOptions | None = None, holdout=None, callback=None):
    """Mini-batch gradient descent (optional momentum) on mean squared energy error.

    Returns the trained model and one :class:`EpochMetrics` per epoch; epoch 0
    records the initial state.
    """
    opts = opts or TrainOptions()
    dataset = list(dataset)
    if any(s.target_energy is None for s in dataset):
        raise ArgumentError("every training system needs a target energy")
    rng = np.random.default_rng(opts.seed)
    params = {k: np.array(v) for k, v in model.parameters().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    t0 = time.perf_counter()
    metrics = [EpochMetrics(0, rmse(model, dataset),
                            rmse(model, holdout) if holdout else None, 0.0)]
    if callback:
        callback(metrics[-1])
    for epoch in range(1, opts.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), opts.batch_size):
            batch = [dataset[i] for i in order[start:start + opts.batch_size]]
            loss, grads = _batch_gradient(model, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(
                    f"non-finite loss {loss!r} at epoch {epoch}, batch starting {start}; "
                    f"energies of batch: {[forward(model, s)[0] for s in batch]}")
            if opts.grad_clip:
                total = math.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads.values()))
                if total > opts.grad_clip:
                    grads = {k: g * (opts.grad_clip / total) for k, g in grads.items()}
            for k in params:
                velocity[k] = opts.momentum * velocity[k] - opts.learning_rate * grads[k]
                params[k] = params[k] + velocity[k]
            model = model.with_parameters(params)
        m = EpochMetrics(epoch, rmse(model, dataset),
                         rmse(model, holdout) if holdout else None,
                         time.perf_counter() - t0)
        metrics.append(m)
        log.info("epoch %d train_rmse %.6g holdout_rmse %s", epoch, m.train_rmse, m.holdout_rmse)
        if callback:
            callback(m)
        if opts.max_seconds is not None and m.wall_seconds >= opts.max_seconds:
            log.info("time budget of %.0f s reached after epoch %d", opts.max_seconds, epoch)
            break
    return model, metrics
