"""``protorect`` command line: eval, synth, theory, train.

Errors are printed to stderr as a single line ``error: <Kind>: <message>``
and the process exits with status 2 (1 for unexpected failures).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import featurestore, harness, theory, trainer
from .errors import ProtorectError
from .rectify import MODES


def _int_list(text: str) -> list:
    """Parse ``8``, ``0,1,2,4,8`` or ``1-10``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _modes(text: str) -> list:
    modes = list(MODES) if text == "all" else [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown mode(s) {bad}; choose from {list(MODES)} or 'all'")
    return modes


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _add_episode_args(p):
    p.add_argument("--features", required=True, help="feature file (.csv or binary PRFS)")
    p.add_argument("--checkpoint", help="project features through a trained adapter first")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--epsilon", type=float, default=10.0)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $PROTORECT_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protorect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="episodic evaluation of one or more modes")
    _add_episode_args(p)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--mode", type=_modes, default=["bd"], help="cspn, bdc, bdi, bd, comma list, or 'all'")
    p.add_argument("--z", type=_int_list, default=[8], help="Z value(s): 8, 0,2,8 or 1-10")
    p.add_argument("--distractors", type=int, default=0, help="N' extra unlabelled classes per episode")
    p.add_argument("--intra-first", action="store_true", help="pseudo-label before shifting in mode bd")
    p.add_argument("--map", dest="compute_map", action="store_true", default=None, help="report mAP")
    p.add_argument("--map-top", type=int, default=15)

    p = sub.add_parser("synth", help="write a synthetic Gaussian feature set")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--spread", type=float, default=0.08)
    p.add_argument("--concentration", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--out", required=True)

    p = sub.add_parser("theory", help="expected-cosine bound and accuracy curve versus Z")
    _add_episode_args(p)
    p.add_argument("--k", type=int, default=1, help="shots K of the curve")
    p.add_argument("--z-max", type=int, default=10)
    p.add_argument("--anchors", default=None,
                   help="'T:acc,T:acc' points for fitting eta; default: measure CSPN at 1 and 5 shots")
    p.add_argument("--empirical", action="store_true", help="also measure the bdi Z-sweep at K shots")

    p = sub.add_parser("train", help="train a linear adapter + cosine classifier on base classes")
    p.add_argument("--features", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--d-out", type=int, default=None, help="adapter output dim (default: input dim)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    return parser


def _eval_config(args, **over) -> harness.RunConfig:
    fields = dict(
        command=args.command, features=args.features, ways=args.ways, shots=getattr(args, "shots", 1),
        queries=args.queries, distractors=getattr(args, "distractors", 0), episodes=args.episodes,
        modes=tuple(getattr(args, "mode", ["bd"])), z_values=tuple(getattr(args, "z", [8])),
        epsilon=args.epsilon, tau=args.tau, seed=args.seed, format=args.format,
        intra_first=getattr(args, "intra_first", False), map_top=getattr(args, "map_top", 15),
        compute_map=getattr(args, "compute_map", None), checkpoint=args.checkpoint,
    )
    fields.update(over)
    return harness.RunConfig(**fields)


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    report = harness.run_eval(cfg, threads=args.threads)
    _write(harness.emit_report(report, cfg.format), args.out)
    return 0


def cmd_synth(args) -> int:
    fs = featurestore.synth(args.classes, args.per_class, args.dim, args.spread, args.seed, args.concentration)
    featurestore.save(fs, args.out, args.format)
    return 0


def cmd_theory(args) -> int:
    fs = featurestore.load(args.features)
    if args.checkpoint:
        fs = trainer.project(trainer.load_checkpoint(args.checkpoint), fs)
    params = theory.dataset_params(featurestore.normalize(fs))
    if args.anchors:
        points = []
        for item in args.anchors.split(","):
            t, acc = item.split(":")
            points.append((int(t), float(acc)))
    else:
        points = []
        for shots in (1, 5):
            cfg = _eval_config(args, shots=shots, modes=("cspn",), z_values=(0,), distractors=0)
            points.append((shots, harness.run_eval(cfg, fs=fs, threads=args.threads).cells[0].acc))
    params = params.with_eta(theory.fit_eta(points, params))
    zs = list(range(0, args.z_max + 1))
    empirical = None
    if args.empirical:
        cfg = _eval_config(args, shots=args.k, modes=("bdi",), z_values=tuple(zs), distractors=0)
        rep = harness.run_eval(cfg, fs=fs, threads=args.threads)
        empirical = {c.z: c.acc for c in rep.cells}
    rows = harness.theory_rows(params, args.k, zs, empirical)
    if args.format == "json":
        payload = {"lambda": params.lam, "alpha": params.alpha, "eta": params.eta, "dim": params.dim,
                   "anchors": [list(p) for p in points], "rows": rows}
        _write(harness.canonical_json(payload), args.out)
    else:
        _write(harness.emit_rows(rows, "tsv"), args.out)
    return 0


def cmd_train(args) -> int:
    fs = featurestore.load(args.features)
    hyper = trainer.TrainHyper(lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                               epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    params = trainer.init_params(fs.dim, args.d_out or fs.dim, fs.num_classes, seed=args.seed, tau=args.tau,
                                 hyper=hyper)
    best, history = trainer.train(fs, params, hyper, verbose=args.verbose)
    trainer.save_checkpoint(best, args.out)
    acc = trainer.training_accuracy(best, fs)
    sys.stderr.write(f"loss {history[0]:.6f} -> {min(history):.6f}; train acc {acc:.4f}; tau {best.tau:.4f}\n")
    return 0


COMMANDS = {"eval": cmd_eval, "synth": cmd_synth, "theory": cmd_theory, "train": cmd_train}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ProtorectError as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 2
    except (OSError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
