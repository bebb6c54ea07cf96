"""Stochastic cyclic-block updates of the Kruskal matrices ``B[n]``.

For a sampled batch, the coefficient row of ``b[n][:, r]`` for entry ``s``
is ``w_s(r) = c_s(r) * A[n][i_n]`` with
``c_s(r) = prod_{k != n} A[k][i_k] @ B[k][:, r]``.  This is the row of
``H^(n) O_r^(n)`` with neither matrix materialized (``O_r`` is block
diagonal with Khatri-Rao weights, ``H`` rows are Kronecker products of factor
rows).

Per mode ``n`` the batch coefficients ``W`` (``R x M x J_n``) are formed once;
then each ``r`` in turn gets a residual that excludes its own term, a
gradient and one averaged-SGD step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalDivergence
from .model import TuckerModel
from .scheduler import WorkerPool, partition_core_batch, reduce
from .sptensor import CooTensor, sample_batch


def sgd_step(m: int, reg: float, lr: float, w: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Averaged SGD: ``w - lr * (V / m + reg * w)``.

    `V` is the summed (not averaged) data gradient over the `m` samples.
    """
    if m < 1 or lr < 0 or reg < 0:
        raise ValueError(f"invalid SGD arguments m={m}, lr={lr}, reg={reg}")
    w = np.asarray(w, dtype=np.float64)
    out = w - lr * (np.asarray(V) / m + reg * w)
    if not np.all(np.isfinite(out)):
        raise NumericalDivergence(
            "parameter update produced non-finite values; reduce the learning rate"
        )
    return out


def compute_w_row(model: TuckerModel, sub, n: int, r: int) -> np.ndarray:
    """Coefficient row of ``b[n][:, r]`` for one 0-based coordinate."""
    sub = np.asarray(sub, dtype=np.int64)
    c = 1.0
    for k in range(model.order):
        if k != n:
            c *= model.factors[k][sub[k]] @ model.kruskal[k][:, r]
    return c * model.factors[n][sub[n]]


def compute_w(model: TuckerModel, subs: np.ndarray, n: int, out=None) -> np.ndarray:
    """All coefficient rows for a batch: array ``(R, m, J_n)``."""
    m = subs.shape[0]
    R = model.ranks.r_core
    P = np.ones((m, R))
    for k in range(model.order):
        if k != n:
            P *= model.factors[k][subs[:, k]] @ model.kruskal[k]
    An = model.factors[n][subs[:, n]]
    if out is None:
        out = np.empty((R, m, An.shape[1]))
    np.multiply(P.T[:, :, None], An[None, :, :], out=out)
    return out


def core_residual(W: np.ndarray, x: np.ndarray, B: np.ndarray, r_exclude: int, out=None) -> np.ndarray:
    """``x - sum_{r != r_exclude} W[r] @ B[:, r]``."""
    if out is None:
        out = np.empty_like(x, dtype=np.float64)
    out[...] = x
    for r in range(W.shape[0]):
        if r != r_exclude:
            out -= W[r] @ B[:, r]
    return out


def grad_b(W_r: np.ndarray, xhat: np.ndarray, b: np.ndarray, m: int, reg: float):
    """Returns ``(V, g, C)``.

    ``C = W_r^T W_r``, ``V = -W_r^T xhat + C b`` and ``g = V / m + reg * b``.
    """
    C = W_r.T @ W_r
    V = C @ b - W_r.T @ xhat
    return V, V / m + reg * b, C


def core_objective(W: np.ndarray, x: np.ndarray, B: np.ndarray, reg: float) -> float:
    """Half mean squared batch error plus ``reg/2 * ||B||^2`` (the function the steps descend)."""
    pred = np.einsum("rmj,jr->m", W, B)
    return 0.5 * float(np.sum((x - pred) ** 2)) / x.shape[0] + 0.5 * reg * float(np.sum(B * B))


@dataclass
class CoreBatchWorkspace:
    """Reusable buffers for one core phase; sized for the largest mode."""

    batch: int
    max_j: int
    r_core: int
    allocations: int = 0
    _w: np.ndarray = field(default=None, repr=False)
    _xhat: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._allocate()

    def _allocate(self):
        self._w = np.empty(self.r_core * self.batch * self.max_j)
        self._xhat = np.empty(self.batch)
        self.allocations += 1

    def ensure(self, batch: int, max_j: int, r_core: int):
        if batch > self.batch or max_j > self.max_j or r_core != self.r_core:
            self.batch = max(batch, self.batch)
            self.max_j = max(max_j, self.max_j)
            self.r_core = r_core
            self._allocate()

    def coeffs(self, m: int, jn: int) -> np.ndarray:
        return self._w[: self.r_core * m * jn].reshape(self.r_core, m, jn)

    def xhat(self, m: int) -> np.ndarray:
        return self._xhat[:m]

    @property
    def nbytes(self) -> int:
        return self._w.nbytes + self._xhat.nbytes


@dataclass
class CoreStats:
    seconds: float = 0.0
    batch_size: int = 0
    workers: int = 1
    steps: int = 0
    peak_bytes: int = 0


def update_core_epoch(
    model: TuckerModel,
    tensor: CooTensor,
    hyper,
    rng: np.random.Generator,
    pool: WorkerPool | None = None,
    workspace: CoreBatchWorkspace | None = None,
) -> CoreStats:
    """One pass over all ``b[n][:, r]`` in cyclic order, then refresh the core cache.

    The batch ``Psi`` (``hyper.batch_m`` entries) is drawn once per epoch and
    shared by all modes unless ``hyper.resample_per_mode`` is set.  The batch
    is cut into contiguous per-worker slices; partial ``W^T xhat`` and
    ``W^T W`` are merged in worker-rank order.
    """
    t0 = time.perf_counter()
    pool = pool or WorkerPool(1)
    N, R = model.order, model.ranks.r_core
    M = min(hyper.batch_m, tensor.nnz)
    if workspace is None:
        workspace = CoreBatchWorkspace(M, max(model.ranks.dims), R)
    workspace.ensure(M, max(model.ranks.dims), R)

    psi = sample_batch(tensor, M, rng)
    stats = CoreStats(batch_size=M)
    for n in range(N):
        if n > 0 and hyper.resample_per_mode:
            psi = sample_batch(tensor, M, rng)
        subs = tensor.subs[psi]
        x = tensor.vals[psi]
        jn = model.ranks.dims[n]
        W = workspace.coeffs(M, jn)
        xhat = workspace.xhat(M)
        slices = partition_core_batch(np.arange(M), pool.workers)
        bounds = [(int(s[0]), int(s[-1]) + 1) for s in slices]
        stats.workers = len(bounds)

        def build(rank, bd):
            lo, hi = bd
            compute_w(model, subs[lo:hi], n, out=W[:, lo:hi, :])

        pool.map(build, bounds)
        B = model.kruskal[n]

        if hyper.incremental_residual:
            # running residual of the full model on the batch
            core_residual(W, x, B, -1, out=xhat)

        for rc in range(R):
            def partial(rank, bd, rc=rc):
                lo, hi = bd
                Wr = W[rc, lo:hi]
                if hyper.incremental_residual:
                    xh = xhat[lo:hi]
                    xh += Wr @ B[:, rc]
                else:
                    xh = core_residual(W[:, lo:hi], x[lo:hi], B, rc, out=xhat[lo:hi])
                return Wr.T @ xh, Wr.T @ Wr

            parts = pool.map(partial, bounds)
            wx = reduce([p[0] for p in parts])
            C = reduce([p[1] for p in parts])
            V = C @ B[:, rc] - wx
            B[:, rc] = sgd_step(M, hyper.reg_b, hyper.lr_b, B[:, rc], V)
            stats.steps += 1
            if hyper.incremental_residual:
                xhat -= W[rc] @ B[:, rc]
    model.refresh_core()
    stats.peak_bytes = workspace.nbytes
    stats.seconds = time.perf_counter() - t0
    return stats
