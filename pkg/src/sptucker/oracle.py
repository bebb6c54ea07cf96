"""Brute-force reference constructions for tests.

Everything here materializes the full intermediate matrices and is guarded
to tiny shapes.  None of it is used by training code; it exists so the
factorized fast paths can be checked against literal definitions.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .exceptions import DomainError
from .model import TuckerModel, core_unfold

MAX_DENSE = 10**6


def _guard(size, what):
    if size > MAX_DENSE:
        raise DomainError(f"refusing to materialize {what} with {size} entries")


def mode_n_product(T: np.ndarray, U: np.ndarray, n: int) -> np.ndarray:
    """``T x_n U``: replace mode `n` (size ``J``) by ``U.shape[0]`` via ``sum_j T[..j..] U[i, j]``."""
    out_shape = list(T.shape)
    out_shape[n] = U.shape[0]
    out = np.zeros(out_shape)
    Tm = np.moveaxis(T, n, 0)
    Om = np.moveaxis(out, n, 0)
    for i in range(U.shape[0]):
        for j in range(U.shape[1]):
            Om[i] += U[i, j] * Tm[j]
    return out


def dense_reconstruct(model: TuckerModel) -> np.ndarray:
    """``G x_1 A1 x_2 A2 ... x_N AN`` as a dense array of the model's shape."""
    _guard(math.prod(model.shape), "reconstruction")
    X = model.core
    for n, A in enumerate(model.factors):
        X = mode_n_product(X, A, n)
    return X


def brute_force_core(kruskal) -> np.ndarray:
    """Core tensor by looping over every index tuple and every rank-one term."""
    J = [B.shape[0] for B in kruskal]
    R = kruskal[0].shape[1]
    _guard(math.prod(J) * R, "core")
    G = np.zeros(J)
    for idx in itertools.product(*(range(j) for j in J)):
        s = 0.0
        for r in range(R):
            p = 1.0
            for k, j in enumerate(idx):
                p *= kruskal[k][j, r]
            s += p
        G[idx] = s
    return G


def vec_n(X: np.ndarray, n: int) -> np.ndarray:
    """Mode-`n` vectorization: column-major stacking of the mode-`n` unfolding."""
    return core_unfold(X, n).reshape(-1, order="F")


def dense_S(model: TuckerModel, n: int) -> np.ndarray:
    """``A^(N) kron ... kron A^(1)`` without mode `n` (``np.kron``, highest mode leftmost)."""
    mats = [model.factors[k] for k in range(model.order) if k != n]
    _guard(math.prod(A.size for A in mats), "S")
    S = mats[-1]
    for A in reversed(mats[:-1]):
        S = np.kron(S, A)
    return S


def dense_E(model: TuckerModel, n: int) -> np.ndarray:
    """``G^(n) S^(n)T``; columns follow the mode-`n` unfolding of the data tensor."""
    return core_unfold(model.core, n) @ dense_S(model, n).T


def dense_H(model: TuckerModel, n: int, subs=None) -> np.ndarray:
    """Coefficient matrix with ``vec_n(Xhat) = H vec_n(G)``.

    Built element by element: the row of data coordinate ``i`` and the
    column of core coordinate ``j`` hold ``prod_k A[k][i_k, j_k]``.  With
    `subs` only the rows of those 0-based coordinates are built, in order.
    """
    shape, J = model.shape, model.ranks.dims
    core_pos = _vec_positions(J, n)
    if subs is None:
        _guard(math.prod(shape) * math.prod(J), "H")
        data_pos = _vec_positions(shape, n)
        coords = list(itertools.product(*(range(s) for s in shape)))
        rows = [data_pos[i] for i in coords]
        H = np.zeros((math.prod(shape), math.prod(J)))
    else:
        coords = [tuple(int(v) for v in s) for s in np.asarray(subs)]
        _guard(len(coords) * math.prod(J), "H")
        rows = range(len(coords))
        H = np.zeros((len(coords), math.prod(J)))
    for row, i in zip(rows, coords):
        for j in itertools.product(*(range(s) for s in J)):
            p = 1.0
            for k in range(model.order):
                p *= model.factors[k][i[k], j[k]]
            H[row, core_pos[j]] = p
    return H


def _vec_positions(shape, n):
    """0-based mode-`n` vectorization position of every index tuple."""
    pos = np.arange(math.prod(shape)).reshape(
        [shape[n]] + [s for k, s in enumerate(shape) if k != n], order="F"
    )
    return np.moveaxis(pos, 0, n)


def khatri_rao_column(kruskal, n: int, r: int) -> np.ndarray:
    """Column ``r`` of ``B^(N) kr ... kr B^(1)`` without mode `n`."""
    cols = [kruskal[k][:, r] for k in range(len(kruskal)) if k != n]
    q = cols[-1]
    for c in reversed(cols[:-1]):
        q = np.kron(q, c)
    return q


def dense_O_r(kruskal, n: int, r: int) -> np.ndarray:
    """Stack of ``q[m, r] * I_{J_n}`` blocks, shape ``prod(J) x J_n``."""
    q = khatri_rao_column(kruskal, n, r)
    jn = kruskal[n].shape[0]
    _guard(q.size * jn * jn, "O_r")
    return np.vstack([qm * np.eye(jn) for qm in q])


def entry_rows(model: TuckerModel, subs: np.ndarray, n: int) -> np.ndarray:
    """Positions of 0-based subscripts in the mode-`n` vectorization."""
    pos = _vec_positions(model.shape, n)
    return pos[tuple(np.asarray(subs).T)]


def core_batch_objective(model: TuckerModel, subs, vals, n: int, r: int, b, reg: float, H=None) -> float:
    """Batch objective for column ``b[n][:, r]`` evaluated through dense ``H`` and ``O``.

    ``(1 / 2M) || x - H_Psi sum_r' O_r' b_r' ||^2 + reg / 2 ||b||^2`` where
    column `r` is replaced by `b`.  `H` may hold the precomputed rows of
    ``dense_H(model, n, subs)``.
    """
    if H is None:
        H = dense_H(model, n, subs)
    B = model.kruskal[n].copy()
    B[:, r] = b
    g = sum(dense_O_r(model.kruskal, n, rr) @ B[:, rr] for rr in range(B.shape[1]))
    resid = np.asarray(vals) - H @ g
    return 0.5 * float(resid @ resid) / len(vals) + 0.5 * reg * float(np.dot(b, b))


def factor_row_objective(model: TuckerModel, subs, vals, n: int, a, reg: float, E=None) -> float:
    """Row objective ``(1 / 2m) sum (x - a E_col)^2 + reg / 2 ||a||^2`` via dense ``E``.

    `E` may hold a precomputed ``dense_E(model, n)``.
    """
    if E is None:
        E = dense_E(model, n)
    cols = _unfold_cols(model.shape, np.asarray(subs), n)
    resid = np.asarray(vals) - np.asarray(a) @ E[:, cols]
    return 0.5 * float(resid @ resid) / len(vals) + 0.5 * reg * float(np.dot(a, a))


def _unfold_cols(shape, subs, n):
    col = np.zeros(subs.shape[0], dtype=np.int64)
    stride = 1
    for k, s in enumerate(shape):
        if k == n:
            continue
        col += subs[:, k] * stride
        stride *= s
    return col


def fd_gradient(objective, params, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of `objective` at `params`."""
    if not step > 0:
        raise DomainError("step must be positive")
    p = np.array(params, dtype=np.float64)
    g = np.empty_like(p)
    for i in range(p.size):
        hi = p.copy()
        lo = p.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        g.flat[i] = (objective(hi) - objective(lo)) / (2 * step)
    return g


def relative_error(g, ref) -> np.ndarray:
    """Componentwise ``|g - ref| / max(1, |ref|)``."""
    g = np.asarray(g)
    ref = np.asarray(ref)
    return np.abs(g - ref) / np.maximum(1.0, np.abs(ref))
