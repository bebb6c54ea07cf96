"""Accuracy metrics, per-epoch telemetry, communication model and benchmarks."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .exceptions import DomainError
from .model import Ranks, TuckerModel, predict

CSV_FIELDS = (
    "epoch", "core_s", "factor_s", "total_s", "train_rmse", "train_mae",
    "test_rmse", "test_mae", "peak_bytes", "comm_bytes",
)
TIMING_FIELDS = ("core_s", "factor_s", "total_s")


@dataclass
class EpochMetrics:
    epoch: int
    core_s: float
    factor_s: float
    total_s: float
    train_rmse: float
    train_mae: float
    test_rmse: float = float("nan")
    test_mae: float = float("nan")
    peak_bytes: int = 0
    comm_bytes: int = 0

    def row(self):
        return [repr(v) if isinstance(v, float) else str(v) for v in dataclasses.astuple(self)]


def error_metrics(actual, predicted):
    """``(rmse, mae)`` of two equally long value arrays."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.size == 0:
        raise DomainError("cannot score an empty set")
    err = actual - predicted
    return math.sqrt(float(np.dot(err, err)) / err.size), float(np.abs(err).sum()) / err.size


def rmse_mae(model: TuckerModel, entries):
    """RMSE and MAE of `model` over a :class:`CooTensor` (or ``(subs, vals)``)."""
    if hasattr(entries, "subs"):
        subs, vals = entries.subs, entries.vals
    else:
        subs, vals = entries
    if len(vals) == 0:
        raise DomainError("cannot score an empty set")
    return error_metrics(vals, predict(model, subs))


def global_mean_baseline(train, test):
    """RMSE and MAE on `test` of predicting the mean training value everywhere."""
    if train.nnz == 0:
        raise DomainError("cannot take the mean of an empty training set")
    mu = float(np.mean(train.vals))
    return error_metrics(test.vals, np.full(test.nnz, mu))


def comm_cost_report(ranks):
    """Parameters exchanged per core synchronization.

    Returns ``(dense_core_params, kruskal_params, ratio)`` with
    ``dense = prod(J)`` and ``kruskal = sum(J) * R_core``.  `ranks` may be a
    :class:`Ranks` or a ``(J, r_core)`` pair.
    """
    if isinstance(ranks, Ranks):
        J, r = ranks.dims, ranks.r_core
    else:
        J, r = ranks
    J = [int(j) for j in J]
    dense = math.prod(J)
    kruskal = sum(J) * int(r)
    return dense, kruskal, dense / kruskal


def comm_bytes_per_epoch(ranks: Ranks, workers: int) -> int:
    """Modeled traffic: every worker receives the updated Kruskal matrices once per epoch."""
    return 8 * comm_cost_report(ranks)[1] * max(1, workers)


def write_metrics_csv(rows: Sequence[EpochMetrics], path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow(r.row())


def read_metrics_csv(path) -> List[EpochMetrics]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise DomainError(f"unexpected metrics header {reader.fieldnames}")
    out = []
    for rec in reader:
        kw = {}
        for f in dataclasses.fields(EpochMetrics):
            kw[f.name] = int(rec[f.name]) if f.type in ("int", int) else float(rec[f.name])
        out.append(EpochMetrics(**kw))
    return out


def linear_fit(x, y):
    """Least-squares line; returns ``(slope, intercept, r2)``.  ``r2`` is nan for < 3 points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return float("nan"), float(y[0]) if y.size else float("nan"), float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 and x.size > 2 else float("nan")
    return float(slope), float(intercept), r2


def bench_rank_scaling(tensor, grid, epochs: int = 2, hyper=None, mode: int = 0):
    """Seconds per epoch (and workspace bytes) while ``core_dims[mode]`` sweeps `grid`.

    The other ranks keep their values from `hyper`.  The first epoch of
    every setting is a warm-up and is not timed; the median of the rest is
    reported.  Returns
    ``(rows, fit)`` with rows ``(dim, seconds_per_epoch, peak_bytes)`` and
    ``fit = {"slope", "intercept", "r2", "degenerate"}``.
    """
    from .config import HyperParams
    from .train import fit

    hyper = hyper or HyperParams(core_dims=(5,) * tensor.order, r_core=5, threads=1, strategy="serial")
    rows = []
    for j in grid:
        dims = list(hyper.core_dims)
        dims[mode] = int(j)
        h = hyper.replace(core_dims=tuple(dims), epochs=epochs + 1)
        _, hist = fit(tensor, h, evaluate=False)
        timed = hist[1:]
        rows.append((int(j), float(np.median([m.total_s for m in timed])),
                     int(max(m.peak_bytes for m in timed))))
    slope, intercept, r2 = linear_fit([r[0] for r in rows], [r[1] for r in rows])
    return rows, {"slope": slope, "intercept": intercept, "r2": r2, "degenerate": len(rows) < 3}


def bench_speedup(tensor, thread_grid, epochs: int = 2, hyper=None):
    """Rows ``(L, seconds, speedup, efficiency)`` relative to the first grid entry.

    The grid should start at 1.  The first epoch of each run is a warm-up.
    """
    from .config import HyperParams
    from .train import fit

    hyper = hyper or HyperParams(core_dims=(5,) * tensor.order, r_core=5, strategy="improved")
    rows = []
    base = None
    for L in thread_grid:
        h = hyper.replace(threads=int(L), epochs=epochs + 1)
        _, hist = fit(tensor, h, evaluate=False)
        secs = float(sum(m.total_s for m in hist[1:]))
        base = secs if base is None else base
        speed = base / secs
        rows.append((int(L), secs, speed, speed / int(L)))
    return rows
