"""Command line interface: ``cgnet <command> ...``.

Exit codes: 0 success, 1 failure (failed checks, bad input files), 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import data, so3
from .errors import CGNetError
from .network import DEFAULT_HYPER, Model, TrainOptions, backward, forward, train
from .selftest import SUITES, run_selftest

log = logging.getLogger("cgnet")


class UsageError(Exception):
    pass


# ----------------------------------------------------------- value parsers


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def _optional_tag(text: str):
    t = str(text).strip()
    return None if t.lower() in ("", "none", "off") else t


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise UsageError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = (value, lineno)
    return out


def _apply_config(parser: argparse.ArgumentParser, args, path, argv) -> None:
    """Config values fill every option not given on the command line."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    words = [w.split("=", 1)[0] for w in argv]
    given = {a.dest for a in actions.values() if any(opt in words for opt in a.option_strings)}
    for key, (value, lineno) in read_config(path).items():
        if key not in actions:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; "
                             f"allowed: {', '.join(sorted(actions))}")
        if key in given:
            continue
        act = actions[key]
        try:
            setattr(args, key, act.type(value) if act.type else value)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None


# ------------------------------------------------------------------ commands


def cmd_selftest(args) -> int:
    overrides = {name: args.tol for name in SUITES} if args.tol is not None else None
    report = run_selftest(tol_scale=args.tol_scale, overrides=overrides, seed=args.seed)
    print(report.format())
    return 0 if report.passed else 1


def cmd_gen_data(args) -> int:
    systems = data.gen_dataset(args.n, (args.min_atoms, args.max_atoms), seed=args.seed,
                               potential=args.potential, n_species=args.n_species)
    data.write_dataset(systems, args.out)
    print(f"wrote {len(systems)} systems to {args.out}")
    return 0


HYPER_FLAGS = {
    "channels": int, "depth": int, "cutoff": float, "truncate_ell": int, "n_species": int,
    "hidden_kind": str, "root_kind": str, "moment_order": int, "radial_powers": _int_list,
    "root_radial_powers": _int_list, "nonlinearity": _optional_tag,
    "root_nonlinearity": _optional_tag, "state_channel": _bool, "init_seed": int,
}


def _load_training_data(args):
    if args.data:
        systems = data.read_dataset(args.data)
    else:
        systems = data.gen_dataset(args.n, seed=args.data_seed, potential=args.potential)
    if len(systems) < 2:
        raise CGNetError("need at least two systems to split into train and holdout")
    n_hold = int(round(args.holdout_fraction * len(systems)))
    n_hold = min(max(n_hold, 1), len(systems) - 1)
    return systems[:len(systems) - n_hold], systems[len(systems) - n_hold:]


def cmd_train(args) -> int:
    if not args.out or not args.metrics:
        raise UsageError("train needs --out and --metrics (flags or config keys)")
    hyper = {k: getattr(args, k) for k in HYPER_FLAGS if getattr(args, k) is not None}
    model = Model.init(hyper)
    tr, ho = _load_training_data(args)
    opts = TrainOptions(learning_rate=args.learning_rate, momentum=args.momentum,
                        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                        grad_clip=args.grad_clip, max_seconds=args.max_seconds)
    with open(args.metrics, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rmse", "holdout_rmse", "wall_seconds"])

        def record(m):
            writer.writerow([m.epoch, repr(m.train_rmse), repr(m.holdout_rmse), f"{m.wall_seconds:.3f}"])
            fh.flush()
            print(f"epoch {m.epoch:3d}  train_rmse {m.train_rmse:.6f}  holdout_rmse {m.holdout_rmse:.6f}",
                  flush=True)

        model, metrics = train(model, tr, opts, holdout=ho, callback=record)
    model.save(args.out)
    first, last = metrics[0].holdout_rmse, metrics[-1].holdout_rmse
    print(f"holdout rmse {first:.6f} -> {last:.6f} (factor {first / last:.2f}); checkpoint {args.out}")
    return 0


def _predict(model, systems):
    return np.array([forward(model, s)[0] for s in systems])


def cmd_eval(args) -> int:
    model = Model.load(args.ckpt)
    systems = data.read_dataset(args.data)
    if any(s.target_energy is None for s in systems):
        raise CGNetError(f"{args.data}: every system needs an energy to evaluate")
    pred = _predict(model, systems)
    err = pred - np.array([s.target_energy for s in systems])
    print(f"systems {len(systems)}")
    print(f"rmse {float(np.sqrt(np.mean(err ** 2))):.10g}")
    print(f"max_abs_error {float(np.abs(err).max()):.10g}")
    return 0 if np.all(np.isfinite(err)) else 1


def cmd_forces(args) -> int:
    model = Model.load(args.ckpt)
    systems = data.read_dataset(args.data)
    with open(args.out, "w") as fh:
        for s in systems:
            e, tape = forward(model, s)
            f = -backward(tape)["positions"]
            fh.write(json.dumps({"energy": e, "forces": f.tolist()}) + "\n")
    print(f"wrote forces for {len(systems)} systems to {args.out}")
    return 0


def cmd_dump_cg(args) -> int:
    if not 0 <= 2 * args.lmax <= so3.L_CG:
        raise UsageError(f"--lmax must be in [0, {so3.L_CG // 2}] so that l1 + l2 <= L_CG")
    records = so3.dump_cg(args.lmax)
    # written by hand so every coefficient carries 17 significant digits
    with open(args.out, "w") as fh:
        fh.write("[\n")
        for k, rec in enumerate(records):
            rows = ", ".join("[" + ", ".join(format(x, ".17g") for x in row) + "]" for row in rec["rows"])
            sep = "," if k + 1 < len(records) else ""
            fh.write(f'  {{"l1": {rec["l1"]}, "l2": {rec["l2"]}, "l": {rec["l"]}, "rows": [{rows}]}}{sep}\n')
        fh.write("]\n")
    print(f"wrote {len(records)} blocks to {args.out}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("selftest", help="run every invariant suite")
    s.add_argument("--tol-scale", type=float, default=1.0, help="multiply every float tolerance")
    s.add_argument("--tol", type=float, default=None, help="replace every tolerance by this value")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)

    g = sub.add_parser("gen-data", help="generate a pair-potential dataset (JSON lines)")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--potential", choices=data.POTENTIALS, default="lennard_jones")
    g.add_argument("--min-atoms", type=int, default=2)
    g.add_argument("--max-atoms", type=int, default=6)
    g.add_argument("--n-species", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model; writes a checkpoint and a metrics CSV")
    t.add_argument("--config", help="flat 'key = value' file; keys are flag names")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV path")
    t.add_argument("--data", help="dataset (JSON lines); default: generate the standard dataset")
    t.add_argument("--n", type=int, default=500, help="size of the generated dataset")
    t.add_argument("--data-seed", type=int, default=0)
    t.add_argument("--potential", choices=data.POTENTIALS, default="lennard_jones")
    t.add_argument("--holdout-fraction", type=float, default=0.2)
    t.add_argument("--epochs", type=int, default=TrainOptions.epochs)
    t.add_argument("--learning-rate", type=float, default=TrainOptions.learning_rate)
    t.add_argument("--momentum", type=float, default=TrainOptions.momentum)
    t.add_argument("--batch-size", type=int, default=TrainOptions.batch_size)
    t.add_argument("--seed", type=int, default=TrainOptions.seed, help="shuffling seed")
    t.add_argument("--grad-clip", type=float, default=None)
    t.add_argument("--max-seconds", type=float, default=None, help="wall-clock budget for training")
    for key, typ in HYPER_FLAGS.items():
        t.add_argument("--" + key.replace("_", "-"), type=typ, default=None,
                       help=f"default {DEFAULT_HYPER[key]}")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="energy RMSE and max absolute error of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("forces", help="energies and forces of a checkpoint (JSON lines)")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forces)

    d = sub.add_parser("dump-cg", help="write CG blocks with l1, l2 <= lmax as JSON")
    d.add_argument("--lmax", type=int, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump_cg)
    p.commands = sub.choices
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "config", None):
            subparser = parser.commands[args.command]
            _apply_config(subparser, args, args.config, argv)
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CGNetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
