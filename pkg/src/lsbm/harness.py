"""Seeded Monte Carlo trials, threshold sweeps and result aggregation."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, NamedTuple

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .diagnostics import diagnose
from .errors import LsbmError
from .inference import fit
from .model import LsbmParams, critical_t, validate_params
from .rng import derive_seed
from .sampler import label_matrices, sample_graph

log = logging.getLogger(__name__)

CSV_HEADER = [
    "t", "n", "trial", "seed", "labeled_exact", "partition_exact", "agreement",
    "margin_over_logn", "max_alignment_residual", "genie_agreement", "wall_clock_ms",
]
MAX_PERMUTATION_K = 8
WILSON_Z = 1.959963984540054


@dataclass(frozen=True)
class Cell:
    index: int
    t: float
    n: int
    multiplier: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    params: LsbmParams
    t_grid: tuple[float, ...]
    n_list: tuple[int, ...]
    trials: int
    master_seed: int = 0
    output: str = "sweep.csv"
    parallelism: int = 1
    t_mode: str = "absolute"
    record_timing: bool = True

    def cells(self) -> list[Cell]:
        """Resolve the (n, t) grid; multipliers are scaled by the critical t of the template."""
        tc = critical_t(self.params) if self.t_mode == "multiplier" else None
        out = []
        for n, t in itertools.product(self.n_list, self.t_grid):
            t_abs = t * tc if tc is not None else t
            out.append(Cell(len(out), float(t_abs), int(n), float(t) if tc is not None else None))
        return out

    def cell_params(self, cell: Cell) -> LsbmParams:
        return validate_params({**self.params.to_dict(), "t": cell.t, "n": cell.n})


def config_from_dict(raw: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from its JSON form.

    ``params`` is either an inline parameter object or a path (relative to
    ``base_dir``) to a params file.  ``t_mode`` is ``"absolute"`` or
    ``"multiplier"`` (entries of ``t_grid`` scale the critical t).
    """
    try:
        p = raw["params"]
        if isinstance(p, str):
            path = Path(p) if base_dir is None else base_dir / p
            with open(path) as fh:
                p = json.load(fh)
        params = validate_params(p)
        t_grid = tuple(float(x) for x in raw["t_grid"])
        n_list = tuple(int(x) for x in raw.get("n_list", [params.n]))
        trials = int(raw["trials"])
    except KeyError as exc:
        raise LsbmError("BAD_CONFIG", f"missing field {exc}") from exc
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, LsbmError):
            raise
        raise LsbmError("BAD_CONFIG", str(exc)) from exc
    t_mode = raw.get("t_mode", "absolute")
    if t_mode not in ("absolute", "multiplier"):
        raise LsbmError("BAD_CONFIG", f"t_mode must be 'absolute' or 'multiplier', got {t_mode!r}")
    if trials < 1 or not t_grid or not n_list:
        raise LsbmError("BAD_CONFIG", "need trials >= 1 and nonempty t_grid and n_list")
    cfg = ExperimentConfig(
        params=params, t_grid=t_grid, n_list=n_list, trials=trials,
        master_seed=int(raw.get("master_seed", 0)),
        output=str(raw.get("output", "sweep.csv")),
        parallelism=max(1, int(raw.get("parallelism", 1))),
        t_mode=t_mode,
        record_timing=bool(raw.get("record_timing", True)),
    )
    for cell in cfg.cells():
        cfg.cell_params(cell)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise LsbmError("IO_ERROR", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise LsbmError("BAD_CONFIG", str(exc)) from exc
    return config_from_dict(raw, base_dir=path.parent)


class Agreement(NamedTuple):
    labeled_exact: bool
    partition_exact: bool
    agreement: float


def agreement_metrics(sigma_hat, sigma_star, k: int) -> Agreement:
    """Exactness flags and best-permutation accuracy.

    Permutations are enumerated for k <= 8; larger k raises K_TOO_LARGE
    unless :func:`agreement_metrics_matching` is used instead.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=np.int64)
    sigma_star = np.asarray(sigma_star, dtype=np.int64)
    if sigma_hat.shape != sigma_star.shape:
        raise LsbmError("BAD_SHAPE", "labelings differ in length")
    if k > MAX_PERMUTATION_K:
        raise LsbmError("K_TOO_LARGE", f"k={k} exceeds the permutation bound {MAX_PERMUTATION_K}")
    n = sigma_hat.size
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (sigma_hat, sigma_star), 1)
    rows = np.arange(k)
    best = max(int(conf[rows, list(perm)].sum()) for perm in itertools.permutations(range(k)))
    labeled = int(np.trace(conf)) == n
    return Agreement(labeled, best == n, best / n if n else 1.0)


def agreement_metrics_matching(sigma_hat, sigma_star, k: int) -> Agreement:
    """Same quantities via an optimal assignment on the confusion matrix, for any k."""
    sigma_hat = np.asarray(sigma_hat, dtype=np.int64)
    sigma_star = np.asarray(sigma_star, dtype=np.int64)
    n = sigma_hat.size
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (sigma_hat, sigma_star), 1)
    r, c = linear_sum_assignment(conf, maximize=True)
    best = int(conf[r, c].sum())
    return Agreement(int(np.trace(conf)) == n, best == n, best / n if n else 1.0)


@dataclass(frozen=True)
class TrialRecord:
    t: float
    n: int
    trial: int
    seed: int
    labeled_exact: bool
    partition_exact: bool
    agreement: float
    margin_over_logn: float
    max_alignment_residual: float
    genie_agreement: float
    wall_clock_ms: float | None
    cell: int = 0
    tied_vertices: int = 0
    error: str | None = None

    def csv_row(self) -> list[str]:
        fmt = lambda x: f"{x:.12g}"
        return [
            fmt(self.t), str(self.n), str(self.trial), str(self.seed),
            str(int(self.labeled_exact)), str(int(self.partition_exact)),
            fmt(self.agreement), fmt(self.margin_over_logn), fmt(self.max_alignment_residual),
            fmt(self.genie_agreement),
            "" if self.wall_clock_ms is None else f"{self.wall_clock_ms:.3f}",
        ]


def run_trial(params: LsbmParams, trial: int, master_seed: int, cell: int = 0,
              record_timing: bool = True) -> TrialRecord:
    """Sample one instance, recover it and measure it.

    The instance seed depends only on (master_seed, trial), so a trial is
    reproducible on its own.  Failures are captured in ``error``.
    """
    seed = derive_seed(master_seed, "trial", trial)
    start = time.perf_counter()
    try:
        graph = sample_graph(params, seed)
        result = fit(graph, params)
        sigma_hat = result.best.sigma_hat
        truth = graph.assignment.sigma
        if params.k <= MAX_PERMUTATION_K:
            agree = agreement_metrics(sigma_hat, truth, params.k)
        else:
            agree = agreement_metrics_matching(sigma_hat, truth, params.k)
        report = diagnose(graph, params, result.bases, label_matrices(graph), sigma_hat)
        fields = dict(
            labeled_exact=agree.labeled_exact, partition_exact=agree.partition_exact,
            agreement=agree.agreement, margin_over_logn=report.margin_over_logn,
            max_alignment_residual=float(report.residuals.max()),
            genie_agreement=report.genie_agreement, tied_vertices=result.best.ties, error=None,
        )
    except LsbmError as exc:
        log.warning("trial %d (t=%g, n=%d) failed: %s", trial, params.t, params.n, exc)
        nan = float("nan")
        fields = dict(labeled_exact=False, partition_exact=False, agreement=nan,
                      margin_over_logn=nan, max_alignment_residual=nan, genie_agreement=nan,
                      error=str(exc))
    elapsed = (time.perf_counter() - start) * 1e3 if record_timing else None
    return TrialRecord(t=params.t, n=params.n, trial=trial, seed=seed, wall_clock_ms=elapsed,
                       cell=cell, **fields)


def _task(args) -> TrialRecord:
    params, trial, seed, cell, timing = args
    return run_trial(params, trial, seed, cell, timing)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def mann_kendall_increasing(values) -> tuple[int, float]:
    """Mann-Kendall S statistic and one-sided p-value for an increasing trend."""
    values = np.asarray(values, dtype=float)
    s = int(sum(np.sign(values[j] - values[i]) for i in range(values.size) for j in range(i + 1, values.size)))
    res = stats.kendalltau(np.arange(values.size), values, alternative="greater")
    return s, float(res.pvalue)


def _rate(records: list[TrialRecord], attr: str) -> dict[str, float]:
    hits = sum(bool(getattr(r, attr)) for r in records)
    lo, hi = wilson_interval(hits, len(records))
    return {"rate": hits / len(records), "successes": hits, "ci95": [lo, hi]}


def _median(records, attr):
    vals = np.array([getattr(r, attr) for r in records], dtype=float)
    vals = vals[~np.isnan(vals)]
    return float(np.median(vals)) if vals.size else None


def summarize(config: ExperimentConfig, records: Iterable[TrialRecord]) -> dict[str, Any]:
    records = list(records)
    cells = []
    for cell in config.cells():
        rows = [r for r in records if r.cell == cell.index]
        if not rows:
            continue
        med_margin = _median(rows, "margin_over_logn")
        cells.append({
            "cell": cell.index, "t": cell.t, "n": cell.n, "t_multiplier": cell.multiplier,
            "trials": len(rows),
            "labeled_exact": _rate(rows, "labeled_exact"),
            "partition_exact": _rate(rows, "partition_exact"),
            "median_margin_over_logn": med_margin if med_margin is None or math.isfinite(med_margin) else None,
            "median_max_alignment_residual": _median(rows, "max_alignment_residual"),
            "errors": sum(r.error is not None for r in rows),
        })
    out: dict[str, Any] = {"master_seed": config.master_seed, "cells": cells}
    if config.t_mode == "multiplier":
        out["critical_t"] = critical_t(config.params)
    return out


def _sort_key(r: TrialRecord):
    return (r.cell, r.trial)


def write_csv(path: Path, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in sorted(records, key=_sort_key):
            w.writerow(r.csv_row())


@dataclass
class SweepResult:
    records: list[TrialRecord]
    summary: dict[str, Any]
    csv_path: Path
    json_path: Path


def run_sweep(config: ExperimentConfig, on_record: Callable[[TrialRecord], None] | None = None) -> SweepResult:
    """Run every (cell, trial) and write the CSV plus a JSON summary next to it.

    Rows are appended and flushed as trials finish; once all trials are done
    the CSV is rewritten in canonical (cell, trial) order so that serial and
    parallel runs produce identical files.
    """
    csv_path = Path(config.output)
    json_path = csv_path.with_suffix(".json")
    tasks = [
        (config.cell_params(cell), trial, config.master_seed, cell.index, config.record_timing)
        for cell in config.cells() for trial in range(config.trials)
    ]
    records: list[TrialRecord] = []
    try:
        fh = open(csv_path, "w", newline="")
    except OSError as exc:
        raise LsbmError("IO_ERROR", str(exc)) from exc
    with fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        fh.flush()

        def sink(rec: TrialRecord) -> None:
            records.append(rec)
            writer.writerow(rec.csv_row())
            fh.flush()
            if on_record is not None:
                on_record(rec)

        if config.parallelism <= 1:
            for task in tasks:
                sink(_task(task))
        else:
            with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
                futures = [pool.submit(_task, task) for task in tasks]
                for fut in as_completed(futures):
                    sink(fut.result())

    summary = summarize(config, records)
    try:
        write_csv(csv_path, records)
        json_path.write_text(json.dumps(summary, indent=2) + "\n")
    except OSError as exc:
        raise LsbmError("IO_ERROR", str(exc)) from exc
    return SweepResult(sorted(records, key=_sort_key), summary, csv_path, json_path)


def residual_scaling(records: Iterable[TrialRecord]) -> dict[int, float]:
    """Median of max alignment residual * sqrt(n) * log log n, per n."""
    by_n: dict[int, list[float]] = {}
    for r in records:
        if r.error is None:
            by_n.setdefault(r.n, []).append(r.max_alignment_residual)
    return {n: float(np.median(v)) * math.sqrt(n) * math.log(math.log(n)) for n, v in sorted(by_n.items())}


def record_to_dict(record: TrialRecord) -> dict[str, Any]:
    d = asdict(record)
    for key, val in d.items():
        if isinstance(val, float) and not math.isfinite(val):
            d[key] = None
    return d
