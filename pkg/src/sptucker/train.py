"""Training driver: alternate the core phase and the factor phase per epoch."""

from __future__ import annotations

import logging
import time

import numpy as np

from .config import HyperParams
from .core_optimizer import CoreBatchWorkspace, update_core_epoch
from .factor_optimizer import update_factor_epoch
from .metrics import EpochMetrics, comm_bytes_per_epoch, rmse_mae
from .model import TuckerModel, init_gaussian, predict
from .scheduler import WorkerPool
from .sptensor import CooTensor

log = logging.getLogger(__name__)


def fit(
    train: CooTensor,
    hyper: HyperParams,
    test: CooTensor | None = None,
    model: TuckerModel | None = None,
    evaluate: bool = True,
    on_epoch=None,
):
    """Train for ``hyper.epochs`` epochs.

    Parameters
    ----------
    train, test : CooTensor
        Observed training entries and an optional held-out set.
    model : TuckerModel, optional
        Starting point; a Gaussian initialization from ``hyper`` otherwise.
    evaluate : bool
        Compute train/test RMSE and MAE after each epoch (not timed).
    on_epoch : callable, optional
        Called as ``on_epoch(model, metrics)``; returning True stops early.

    Returns
    -------
    model, history : TuckerModel, list of EpochMetrics
    """
    hyper.validate()
    if model is None:
        model = init_gaussian(train.shape, hyper.ranks, hyper.init_mean, hyper.init_std, hyper.seed)
    rng = np.random.default_rng(hyper.seed + 1)
    workers = 1 if hyper.strategy == "serial" else hyper.threads
    history = []
    core_ws = CoreBatchWorkspace(min(hyper.batch_m, train.nnz), max(hyper.core_dims), hyper.r_core)
    row_ws: list = []
    comm = comm_bytes_per_epoch(model.ranks, workers)
    nan = float("nan")
    with WorkerPool(workers) as pool:
        for epoch in range(1, hyper.epochs + 1):
            t0 = time.perf_counter()
            # overflow surfaces as NumericalDivergence from the update itself
            with np.errstate(over="ignore", invalid="ignore"):
                cs = update_core_epoch(model, train, hyper, rng, pool, core_ws)
                fs = update_factor_epoch(model, train, hyper, rng, pool, row_ws)
            total = time.perf_counter() - t0
            tr = rmse_mae(model, train) if evaluate else (nan, nan)
            te = rmse_mae(model, test) if evaluate and test is not None else (nan, nan)
            m = EpochMetrics(epoch, cs.seconds, fs.seconds, total, tr[0], tr[1], te[0], te[1],
                             cs.peak_bytes + fs.peak_bytes, comm)
            history.append(m)
            log.info("epoch %d  train rmse %.6f  test rmse %.6f  %.3fs", epoch, tr[0], te[0], total)
            if on_epoch is not None and on_epoch(model, m):
                break
    return model, history


def sweep_objective(model: TuckerModel, tensor: CooTensor, hyper: HyperParams) -> float:
    """Objective that every full-batch block step of one epoch descends.

    ``1/2 sum err^2 + lam_A/2 sum_n sum_i |bucket_ni| |a_ni|^2
    + lam_B/2 M sum_n |B_n|^2``.  Each row step minimizes its own bucket
    objective scaled by ``|bucket|`` and each core step its batch objective
    scaled by ``M``; both are this function restricted to one block.
    """
    err = tensor.vals - predict(model, tensor.subs)
    total = 0.5 * float(err @ err)
    for n in range(model.order):
        sizes = tensor.bucket_sizes(n)
        total += 0.5 * hyper.reg_a * float(sizes @ np.einsum("ij,ij->i", model.factors[n], model.factors[n]))
        total += 0.5 * hyper.reg_b * min(hyper.batch_m, tensor.nnz) * float(np.sum(model.kruskal[n] ** 2))
    return total

