"""Row-wise stochastic updates of the factor matrices ``A[n]``.

Each non-empty row ``a = A[n][i]`` receives one averaged-SGD step per epoch:

    F = sum_j (-x_j + (a @ e_j)) e_j       over the row's batch
    a <- a - lr_a * (F / |batch| + reg_a * a)

where ``e_j = G^(n) s_j`` is the E column of entry ``j`` and ``s_j`` its
Kronecker row.  The data term is accumulated as two parts, ``-x e`` and
``p e`` with the scalar ``p = a @ e``, so ``a (e e^T)`` is never formed.

Serial and naive strategies walk entries grouped by row (each worker owns
whole rows).  The improved strategy walks entries in storage order; every
worker accumulates per-row partial sums privately and the partials are
merged in worker-rank order before the row steps are applied.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalDivergence
from .model import TuckerModel, kron_rows_excluding, predict
from .scheduler import WorkerPool, balance_rows, imbalance, worker_loads
from .sptensor import CooTensor


def row_batch(tensor: CooTensor, n: int, i_n: int, fraction: float = 1.0, rng=None) -> np.ndarray:
    """Entries used to update row `i_n` of mode `n` (both 0-based).

    The full bucket by default; otherwise ``ceil(fraction * size)`` entries
    drawn without replacement and returned in storage order.
    """
    bucket = tensor.bucket(n, i_n)
    if fraction >= 1.0 or bucket.size == 0:
        return bucket
    k = max(1, math.ceil(fraction * bucket.size))
    rng = rng if rng is not None else np.random.default_rng()
    return np.sort(rng.choice(bucket, size=k, replace=False))


def grad_a_row(model: TuckerModel, tensor: CooTensor, n: int, i_n: int, batch, reg: float):
    """Reference gradient for one row, built with the explicit per-entry caches.

    Returns ``(F, g)`` where ``F`` is the summed data term and
    ``g = F / |batch| + reg * a``.
    """
    batch = np.asarray(batch, dtype=np.int64)
    a = model.factors[n][i_n]
    jn = a.shape[0]
    fact1 = np.zeros(jn)
    fact2 = np.zeros(jn)
    G = model.core_unfoldings[n]
    for j in batch:
        cache_s = kron_rows_excluding(model, tensor.subs[j:j + 1], n)[0]
        cache_e = G @ cache_s
        fact1 -= tensor.vals[j] * cache_e
        cache_factp = a @ cache_e
        cache_factvec = cache_factp * cache_e
        fact2 += cache_factvec
    F = fact1 + fact2
    return F, F / max(batch.size, 1) + reg * a


def factor_objective(model: TuckerModel, tensor: CooTensor, n: int, reg: float, batches=None) -> float:
    """Sum over non-empty rows of ``(1/2|b|) sum_b (x - xhat)^2 + reg/2 ||a||^2``.

    `batches` maps row -> entry indices (full buckets when omitted).
    """
    total = 0.0
    pred = predict(model, tensor.subs)
    err2 = (tensor.vals - pred) ** 2
    for i in range(tensor.shape[n]):
        b = tensor.bucket(n, i) if batches is None else batches.get(i, np.empty(0, np.int64))
        if len(b) == 0:
            continue
        a = model.factors[n][i]
        total += 0.5 * float(np.sum(err2[b])) / len(b) + 0.5 * reg * float(a @ a)
    return total


# -- vectorized epoch ------------------------------------------------------------


@dataclass
class RowBatchWorkspace:
    """Private per-worker caches (S rows, E columns, per-entry products).

    Buffers are sized for ``capacity`` entries, which grows only when a
    chunk (bounded by ``chunk + max bucket size``) does not fit.
    """

    capacity: int
    max_kron: int
    max_j: int
    allocations: int = 0
    cache_s: np.ndarray = field(default=None, repr=False)
    cache_e: np.ndarray = field(default=None, repr=False)
    cache_a: np.ndarray = field(default=None, repr=False)
    cache_vec: np.ndarray = field(default=None, repr=False)
    cache_p: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._allocate()

    def _allocate(self):
        c = self.capacity
        self.cache_s = np.empty(c * self.max_kron)
        self.cache_e = np.empty(c * self.max_j)
        self.cache_a = np.empty(c * self.max_j)
        self.cache_vec = np.empty(c * self.max_j)
        self.cache_p = np.empty(c)
        self.allocations += 1

    def ensure(self, capacity: int, max_kron: int, max_j: int):
        if capacity > self.capacity or max_kron > self.max_kron or max_j > self.max_j:
            self.capacity = max(capacity, self.capacity)
            self.max_kron = max(max_kron, self.max_kron)
            self.max_j = max(max_j, self.max_j)
            self._allocate()

    def view(self, name: str, m: int, width: int = 0) -> np.ndarray:
        buf = getattr(self, name)
        if width == 0:
            return buf[:m]
        return buf[: m * width].reshape(m, width)

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for b in (self.cache_s, self.cache_e, self.cache_a, self.cache_vec, self.cache_p))


def _kron_width(model, n):
    return math.prod(j for k, j in enumerate(model.ranks.dims) if k != n)


def _chunks(seg_starts: np.ndarray, total: int, chunk: int):
    """Cut ``[0, total)`` at segment starts into pieces of roughly `chunk` entries.

    A segment belongs to the piece in which it starts, so no segment is split.
    Yields ``(lo, hi, first_seg, last_seg_exclusive)``.
    """
    if total == 0:
        return
    ids = seg_starts // chunk
    cut = np.flatnonzero(np.diff(ids)) + 1
    seg_bounds = np.concatenate(([0], cut, [seg_starts.shape[0]]))
    for s0, s1 in zip(seg_bounds[:-1], seg_bounds[1:]):
        lo = int(seg_starts[s0])
        hi = int(seg_starts[s1]) if s1 < seg_starts.shape[0] else total
        yield lo, hi, int(s0), int(s1)


def _segment_sums(model, tensor, n, entries, seg_starts, ws: RowBatchWorkspace, chunk: int) -> np.ndarray:
    """Per-segment data term ``F`` for `entries` grouped into contiguous same-row segments."""
    jn = model.ranks.dims[n]
    kw = _kron_width(model, n)
    F = np.empty((seg_starts.shape[0], jn))
    G = model.core_unfoldings[n]
    A = model.factors[n]
    for lo, hi, s0, s1 in _chunks(seg_starts, entries.shape[0], chunk):
        m = hi - lo
        ws.ensure(m, kw, jn)
        e_idx = entries[lo:hi]
        subs = tensor.subs[e_idx]
        x = tensor.vals[e_idx]
        S = kron_rows_excluding(model, subs, n, out=ws.view("cache_s", m, kw))
        E = np.matmul(S, G.T, out=ws.view("cache_e", m, jn))
        a = np.take(A, subs[:, n], axis=0, out=ws.view("cache_a", m, jn))
        p = np.einsum("ij,ij->i", a, E, out=ws.view("cache_p", m))
        vec = ws.view("cache_vec", m, jn)
        local = seg_starts[s0:s1] - lo
        np.multiply(x[:, None], E, out=vec)
        fact1 = np.add.reduceat(vec, local, axis=0)
        np.multiply(p[:, None], E, out=vec)
        fact2 = np.add.reduceat(vec, local, axis=0)
        F[s0:s1] = fact2 - fact1
    return F


def _apply_rows(A: np.ndarray, rows: np.ndarray, F: np.ndarray, counts: np.ndarray, reg: float, lr: float):
    if rows.size == 0:
        return
    a = A[rows]
    new = a - lr * (F / counts[:, None] + reg * a)
    if not np.all(np.isfinite(new)):
        raise NumericalDivergence(
            "factor update produced non-finite values; reduce the learning rate"
        )
    A[rows] = new


def select_row_entries(tensor: CooTensor, n: int, fraction: float, rng) -> np.ndarray:
    """Boolean mask over entries: which ones take part in this epoch's row batches."""
    if fraction >= 1.0:
        return np.ones(tensor.nnz, dtype=bool)
    perm, offsets = tensor.mode_group(n)
    sizes = np.diff(offsets)
    keep = np.maximum(1, np.ceil(fraction * sizes)).astype(np.int64)
    keys = rng.random(tensor.nnz)
    rows_sorted = np.repeat(np.arange(sizes.shape[0]), sizes)
    order = np.lexsort((keys[perm], rows_sorted))
    rank_in_row = np.arange(tensor.nnz) - offsets[rows_sorted]
    mask = np.zeros(tensor.nnz, dtype=bool)
    mask[perm[order][rank_in_row < keep[rows_sorted]]] = True
    return mask


@dataclass
class FactorStats:
    seconds: float = 0.0
    rows_updated: int = 0
    rows_skipped: int = 0
    peak_bytes: int = 0
    load_imbalance: list = field(default_factory=list)


def _grouped(entries_by_row: np.ndarray, row_ptr: np.ndarray, rows: np.ndarray):
    """Entries of `rows` (in that order) plus their segment starts."""
    sizes = row_ptr[rows + 1] - row_ptr[rows]
    starts = np.zeros(rows.shape[0], dtype=np.int64)
    if rows.shape[0] > 1:
        np.cumsum(sizes[:-1], out=starts[1:])
    total = int(sizes.sum())
    idx = np.arange(total, dtype=np.int64) + np.repeat(row_ptr[rows] - starts, sizes)
    return entries_by_row[idx], starts


def update_factor_epoch(
    model: TuckerModel,
    tensor: CooTensor,
    hyper,
    rng: np.random.Generator,
    pool: WorkerPool | None = None,
    workspaces: list | None = None,
) -> FactorStats:
    """One SGD step for every non-empty row of every ``A[n]``, modes ascending.

    Requires a fresh core cache (call after the core phase).
    """
    t0 = time.perf_counter()
    pool = pool or WorkerPool(1)
    L = pool.workers
    strategy = hyper.strategy if L > 1 else "serial"
    if workspaces is None:
        workspaces = []
    max_kron = max(_kron_width(model, n) for n in range(model.order))
    while len(workspaces) < L:
        workspaces.append(RowBatchWorkspace(min(hyper.chunk, tensor.nnz), max_kron, max(model.ranks.dims)))
    stats = FactorStats()
    shared = 0

    for n in range(model.order):
        mask = select_row_entries(tensor, n, hyper.row_fraction, rng)
        perm, _ = tensor.mode_group(n)
        by_row = perm[mask[perm]]
        rows_of = tensor.subs[:, n]
        counts = np.bincount(rows_of[by_row], minlength=tensor.shape[n])
        row_ptr = np.zeros(tensor.shape[n] + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        nonempty = np.flatnonzero(counts)
        stats.rows_updated += nonempty.size
        stats.rows_skipped += tensor.shape[n] - nonempty.size
        A = model.factors[n]

        if strategy in ("serial", "naive"):
            owner = balance_rows(counts, L, hyper.balance)
            stats.load_imbalance.append(imbalance(worker_loads(owner, counts, L)))

            def work(rank, rows):
                entries, starts = _grouped(by_row, row_ptr, rows)
                F = _segment_sums(model, tensor, n, entries, starts, workspaces[rank], hyper.chunk)
                _apply_rows(A, rows, F, counts[rows].astype(np.float64), hyper.reg_a, hyper.lr_a)

            pool.map(work, [nonempty[owner[nonempty] == w] for w in range(L)])
        else:
            selected = np.flatnonzero(mask)
            slices = np.array_split(selected, min(L, max(selected.size, 1)))
            sizes = np.array([s.size for s in slices])
            stats.load_imbalance.append(imbalance(sizes))

            def work(rank, part):
                order = np.argsort(rows_of[part], kind="stable")
                entries = part[order]
                r = rows_of[entries]
                starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]]) if r.size else np.empty(0, np.int64)
                F = _segment_sums(model, tensor, n, entries, starts, workspaces[rank], hyper.chunk)
                return r[starts], F

            parts = pool.map(work, slices)
            acc = np.zeros((tensor.shape[n], model.ranks.dims[n]))
            shared = max(shared, acc.nbytes)
            for rows_l, F_l in parts:
                # rows are unique within one worker
                acc[rows_l] += F_l
            _apply_rows(A, nonempty, acc[nonempty], counts[nonempty].astype(np.float64),
                        hyper.reg_a, hyper.lr_a)
    stats.peak_bytes = sum(ws.nbytes for ws in workspaces[:L]) + shared
    stats.seconds = time.perf_counter() - t0
    return stats

