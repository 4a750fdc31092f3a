"""Episodic evaluation: run configs, per-episode loops, statistics and reports."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import featurestore
from .episodes import EpisodeSpec, inject_distractors, sample_episode
from .errors import ProtorectError, ShapeError
from .featurestore import FeatureSet, NormalizedView, normalize
from .rectify import MODES, run_pipeline

__all__ = [
    "RunConfig",
    "CellResult",
    "RunReport",
    "accuracy",
    "ci95",
    "average_precision",
    "mean_average_precision",
    "run_eval",
    "emit_report",
    "report_to_dict",
    "sign_test",
    "worker_count",
    "MAP_FORMULA",
]

Z_CRIT = 1.96
MAP_FORMULA = (
    "per class: rank all queries by that class's softmax probability (desc, ties by index), "
    "keep the top k; AP = mean of precision@i over ranks i holding a relevant query "
    "(true class == class), 0 if none; distractors are never relevant; mAP = mean over classes"
)
CI_FORMULA = "1.96 * std(ddof=1) / sqrt(episodes)"


@dataclass(frozen=True)
class RunConfig:
    command: str = "eval"
    features: Optional[str] = None
    ways: int = 5
    shots: int = 1
    queries: int = 15
    distractors: int = 0
    episodes: int = 600
    modes: tuple = ("bd",)
    z_values: tuple = (8,)
    epsilon: float = 10.0
    tau: float = 10.0
    seed: int = 0
    format: str = "tsv"
    intra_first: bool = False
    map_top: int = 15
    compute_map: Optional[bool] = None
    checkpoint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "z_values", tuple(int(z) for z in self.z_values))
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}; expected one of {MODES}")
        if not self.modes or not self.z_values:
            raise ValueError("need at least one mode and one Z value")
        if any(z < 0 for z in self.z_values):
            raise ValueError("Z values must be non-negative")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.format not in ("tsv", "json"):
            raise ValueError(f"unknown output format {self.format!r}")

    @property
    def spec(self) -> EpisodeSpec:
        return EpisodeSpec(self.ways, self.shots, self.queries, self.distractors, self.seed)

    @property
    def want_map(self) -> bool:
        return self.distractors > 0 if self.compute_map is None else bool(self.compute_map)

    def cells(self) -> list:
        return [(m, z) for m in self.modes for z in self.z_values]

    def echo(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        d["z_values"] = list(self.z_values)
        return d


@dataclass
class CellResult:
    mode: str
    z: int
    acc: float
    ci95: float
    map: Optional[float]
    episode_acc: list
    episode_map: Optional[list]
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config: dict
    seed: int
    ways: int
    shots: int
    cells: list
    paired: list
    metadata: dict

    def cell(self, mode: str, z: int) -> CellResult:
        for c in self.cells:
            if c.mode == mode and c.z == z:
                return c
        raise KeyError((mode, z))


def accuracy(predictions, truth) -> float:
    """Fraction of labelled queries predicted correctly (distractors excluded by the caller)."""
    p = np.asarray(predictions).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    if p.shape != t.shape:
        raise ShapeError(f"{p.size} predictions for {t.size} labels")
    if t.size == 0:
        raise ShapeError("no labelled queries")
    return float(np.mean(p == t))


def ci95(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(Z_CRIT * v.std(ddof=1) / math.sqrt(v.size))


def average_precision(relevance) -> float:
    rel = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def mean_average_precision(probs, truth, top: int = 15) -> float:
    """mAP over classes from a (queries x N) probability matrix.

    ``truth`` holds the episode class of each query, or -1 for distractors.
    """
    if top < 1:
        raise ValueError("top must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth).reshape(-1)
    if probs.shape[0] != truth.size:
        raise ShapeError(f"{probs.shape[0]} score rows for {truth.size} labels")
    aps = []
    for c in range(probs.shape[1]):
        order = np.lexsort((np.arange(truth.size), -probs[:, c]))[:top]
        aps.append(average_precision(truth[order] == c))
    return float(np.mean(aps))


def sign_test(deltas) -> dict:
    d = np.asarray(deltas, dtype=np.float64)
    wins = int(np.sum(d > 0))
    losses = int(np.sum(d < 0))
    n = wins + losses
    p = 1.0 if n == 0 else float(stats.binomtest(wins, n, 0.5, alternative="two-sided").pvalue)
    return {"wins": wins, "losses": losses, "ties": int(d.size - n), "p_value": p}


def worker_count(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("PROTORECT_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def _population_means(view: NormalizedView) -> np.ndarray:
    sums = np.zeros((view.num_classes, view.dim))
    np.add.at(sums, view.labels, view.vectors)
    return sums / np.bincount(view.labels, minlength=view.num_classes)[:, None]


def _evaluate_episode(fs: FeatureSet, view: NormalizedView, pop_means, cfg: RunConfig, index: int) -> dict:
    spec = cfg.spec
    ep = sample_episode(fs, spec, index)
    ep = inject_distractors(fs, ep, spec)
    support = view.vectors[ep.support]
    query = view.vectors[ep.all_query_rows()]
    n_labelled = ep.ways * ep.queries
    truth = ep.query_truth
    full_truth = np.concatenate([truth, np.full(query.shape[0] - n_labelled, -1)])
    out = {}
    for mode, z in cfg.cells():
        res = run_pipeline(
            support, query, mode=mode, z=z, epsilon=cfg.epsilon, tau=cfg.tau,
            intra_first=cfg.intra_first, class_ids=ep.class_ids, population_means=pop_means[ep.class_ids],
        )
        acc = accuracy(res.predictions[:n_labelled], truth)
        mp = mean_average_precision(res.scores.probs, full_truth, cfg.map_top) if cfg.want_map else None
        out[(mode, z)] = (acc, mp, res.diagnostics)
    return out


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def run_eval(cfg: RunConfig, fs: FeatureSet | None = None, threads: Optional[int] = None) -> RunReport:
    """Evaluate every (mode, Z) cell of ``cfg`` on the same episode sequence."""
    if fs is None:
        if cfg.features is None:
            raise ValueError("no feature set given")
        fs = featurestore.load(cfg.features)
        if cfg.checkpoint:
            from .trainer import load_checkpoint, project

            fs = project(load_checkpoint(cfg.checkpoint), fs)
    view = normalize(fs)
    pop_means = _population_means(view)

    def work(i):
        try:
            return _evaluate_episode(fs, view, pop_means, cfg, i)
        except ProtorectError as exc:
            exc.args = (f"episode {i}: {exc}",) + exc.args[1:]
            exc.episode = i
            raise

    n_workers = worker_count(threads)
    if n_workers == 1:
        results = [work(i) for i in range(cfg.episodes)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, range(cfg.episodes)))

    cells = []
    for mode, z in cfg.cells():
        accs = [r[(mode, z)][0] for r in results]
        maps = [r[(mode, z)][1] for r in results] if cfg.want_map else None
        diags = [r[(mode, z)][2] for r in results]
        diag = {
            "xi_norm": _mean([d.xi_norm for d in diags]),
            "pseudo_count": _mean([np.mean(d.pseudo_counts) for d in diags]),
            "weight_entropy": _mean([np.mean(d.weight_entropy) for d in diags]),
            "intra_bias_basic": _mean([np.mean(d.intra_bias_basic) for d in diags]),
            "intra_bias_final": _mean([np.mean(d.intra_bias_final) for d in diags]),
        }
        cells.append(CellResult(
            mode=mode, z=z, acc=_mean(accs), ci95=ci95(accs),
            map=_mean(maps) if maps is not None else None,
            episode_acc=[float(a) for a in accs],
            episode_map=[float(m) for m in maps] if maps is not None else None,
            diagnostics=diag,
        ))

    paired = []
    if "cspn" in cfg.modes:
        for c in cells:
            if c.mode == "cspn":
                continue
            base = next(b for b in cells if b.mode == "cspn" and b.z == c.z)
            deltas = np.subtract(c.episode_acc, base.episode_acc)
            paired.append({
                "mode": c.mode, "baseline": "cspn", "z": c.z,
                "mean_delta": float(deltas.mean()), "ci95": ci95(deltas),
                "deltas": [float(d) for d in deltas],
                **sign_test(deltas),
            })

    return RunReport(
        config=cfg.echo(), seed=cfg.seed, ways=cfg.ways, shots=cfg.shots, cells=cells, paired=paired,
        metadata={"map_formula": MAP_FORMULA, "ci_formula": CI_FORMULA, "map_top": cfg.map_top},
    )


def report_to_dict(report: RunReport) -> dict:
    return {
        "config": report.config,
        "seed": report.seed,
        "ways": report.ways,
        "shots": report.shots,
        "cells": [asdict(c) for c in report.cells],
        "paired": report.paired,
        "metadata": report.metadata,
    }


def _fmt(x) -> str:
    return "NA" if x is None else f"{x:.6f}"


def emit_report(report: RunReport, format: str = "tsv", out=None) -> str:
    """Serialise deterministically; write to ``out`` (path) when given."""
    if format == "json":
        text = json.dumps(report_to_dict(report), sort_keys=True, indent=2, allow_nan=False) + "\n"
    elif format == "tsv":
        lines = ["mode\tways\tshots\tZ\tacc\tci95\tmap"]
        for c in report.cells:
            lines.append(
                f"{c.mode}\t{report.ways}\t{report.shots}\t{c.z}\t{_fmt(c.acc)}\t{_fmt(c.ci95)}\t{_fmt(c.map)}"
            )
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown format {format!r}")
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text)
    return text


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def theory_rows(params, k: int, z_values: Sequence[int], empirical: Optional[dict] = None) -> list:
    """Plot-ready rows (Z, predicted accuracy[, empirical accuracy])."""
    from .theory import accuracy_curve, lower_bound

    rows = []
    for z, pred in accuracy_curve(params, k, z_values):
        row = {"Z": z, "T": k + z, "bound": lower_bound(params, k + z), "predicted_acc": pred}
        if empirical is not None and z in empirical:
            row["empirical_acc"] = empirical[z]
        rows.append(row)
    return rows


def emit_rows(rows: list, format: str = "tsv") -> str:
    if format == "json":
        return canonical_json(rows)
    if not rows:
        return ""
    cols = list(rows[0].keys())
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(str(r[c]) if isinstance(r[c], int) else f"{r[c]:.6f}" for c in cols))
    return "\n".join(lines) + "\n"
