"""Tucker model with a Kruskal-factored core.

The core tensor is never a free parameter: it is the rank-``R_core`` Kruskal
product of matrices ``B[n]`` (``J_n x R_core``).  A dense copy of the core and
all of its unfoldings are cached because the factor phase reads them once per
observed entry.

Modes and row indices are 0-based here.  Column layouts of the unfoldings and
of Kronecker rows follow the matricization convention of
:func:`sptucker.sptensor.unfold_col_index` (lowest remaining mode varies
fastest), so ``G_unfold[n] @ kron_row`` is consistent.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import DomainError, InvariantError, ModelFormatError
from .sptensor import check_shape

MAGIC = b"SPTUCKER"
FORMAT_VERSION = 1
# core is materialized densely; keep it small
MAX_CORE_SIZE = 10**6


@dataclass(frozen=True)
class Ranks:
    """Multilinear ranks ``dims`` and the Kruskal rank of the core."""

    dims: Tuple[int, ...]
    r_core: int

    def __post_init__(self):
        J = tuple(int(j) for j in self.dims)
        object.__setattr__(self, "dims", J)
        object.__setattr__(self, "r_core", int(self.r_core))
        if not J or any(j < 1 for j in J):
            raise InvariantError(f"ranks must be positive, got {J}")
        if self.r_core < 1:
            raise InvariantError(f"r_core must be positive, got {self.r_core}")
        if self.r_core > min(J):
            raise InvariantError(f"r_core={self.r_core} exceeds min(dims)={min(J)}")
        if math.prod(J) > 2**63 - 1:
            raise InvariantError("prod(J) overflows int64")

    @property
    def core_size(self) -> int:
        return math.prod(self.dims)


def reconstruct_core(kruskal: Sequence[np.ndarray]) -> np.ndarray:
    """Dense core ``sum_r b1[:, r] o b2[:, r] o ... o bN[:, r]``."""
    R = kruskal[0].shape[1]
    acc = np.asarray(kruskal[0], dtype=np.float64)
    for B in kruskal[1:]:
        # (..., R) x (J_k, R) -> (..., J_k, R)
        acc = acc[..., None, :] * B
    if acc.shape[-1] != R:
        raise InvariantError("inconsistent R_core across Kruskal matrices")
    return acc.sum(axis=-1)


def core_unfold(G: np.ndarray, n: int) -> np.ndarray:
    """Mode-`n` unfolding ``J_n x prod_{k != n} J_k`` (remaining modes, lowest fastest)."""
    return np.moveaxis(G, n, 0).reshape(G.shape[n], -1, order="F")


def core_fold(M: np.ndarray, n: int, core_shape) -> np.ndarray:
    """Inverse of :func:`core_unfold`."""
    rest = [d for k, d in enumerate(core_shape) if k != n]
    return np.moveaxis(M.reshape([core_shape[n]] + rest, order="F"), 0, n)


def kron_rows(rows: Sequence[np.ndarray], out=None) -> np.ndarray:
    """Row-wise Kronecker product of ``(m, J_k)`` blocks, first block fastest.

    For rows ``a1, a2, ..., aK`` this is ``aK (x) ... (x) a2 (x) a1`` per row.
    `out`, when given, must be a C-contiguous ``(m, prod J_k)`` buffer.
    """
    m = rows[0].shape[0]
    total = math.prod(r.shape[1] for r in rows)
    if out is None:
        out = np.empty((m, total))
    width = rows[0].shape[1]
    out[:, :width] = rows[0]
    for r in rows[1:]:
        jk = r.shape[1]
        # fill highest block first so the source prefix is still intact
        for j in range(jk - 1, -1, -1):
            np.multiply(out[:, :width], r[:, j:j + 1], out=out[:, j * width:(j + 1) * width])
        width *= jk
    return out


class TuckerModel:
    """Factor matrices ``A[n]`` (``I_n x J_n``) and Kruskal matrices ``B[n]``.

    Attributes
    ----------
    core : ndarray
        Dense cached core, shape ``J``.
    core_unfoldings : list of ndarray
        ``core_unfold(core, n)`` for every mode.

    The cache is refreshed eagerly by :meth:`refresh_core`; code that mutates
    ``kruskal`` must call it before the factor phase.
    """

    def __init__(self, shape, ranks: Ranks, factors: List[np.ndarray], kruskal: List[np.ndarray]):
        self.shape = check_shape(shape)
        self.ranks = ranks
        N = len(self.shape)
        if len(ranks.dims) != N or len(factors) != N or len(kruskal) != N:
            raise InvariantError("shape, ranks, factors and Kruskal matrices disagree on order")
        if ranks.core_size > MAX_CORE_SIZE:
            raise InvariantError(f"core of {ranks.core_size} entries is too large to cache")
        self.factors = [np.ascontiguousarray(A, dtype=np.float64) for A in factors]
        self.kruskal = [np.ascontiguousarray(B, dtype=np.float64) for B in kruskal]
        for n in range(N):
            if self.factors[n].shape != (self.shape[n], ranks.dims[n]):
                raise InvariantError(f"A[{n}] has shape {self.factors[n].shape}")
            if self.kruskal[n].shape != (ranks.dims[n], ranks.r_core):
                raise InvariantError(f"B[{n}] has shape {self.kruskal[n].shape}")
        self.refresh_core()

    @property
    def order(self) -> int:
        return len(self.shape)

    def refresh_core(self) -> None:
        self.core = reconstruct_core(self.kruskal)
        self.core_unfoldings = [
            np.ascontiguousarray(core_unfold(self.core, n)) for n in range(self.order)
        ]

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.shape, self.ranks, [A.copy() for A in self.factors],
                           [B.copy() for B in self.kruskal])

    def parameters_equal(self, other: "TuckerModel") -> bool:
        """Bit-exact comparison of all parameters."""
        return (
            self.shape == other.shape
            and self.ranks == other.ranks
            and all(np.array_equal(a, b) for a, b in zip(self.factors, other.factors))
            and all(np.array_equal(a, b) for a, b in zip(self.kruskal, other.kruskal))
        )

    def nbytes(self) -> int:
        return (sum(A.nbytes for A in self.factors) + sum(B.nbytes for B in self.kruskal)
                + self.core.nbytes + sum(G.nbytes for G in self.core_unfoldings))

    def __repr__(self):
        return f"TuckerModel(shape={self.shape}, dims={self.ranks.dims}, r_core={self.ranks.r_core})"


def init_gaussian(shape, ranks: Ranks, mean: float = 0.5, stddev: float = 0.1, seed: int = 0) -> TuckerModel:
    """All ``A[n]`` then all ``B[n]`` drawn i.i.d. from ``Normal(mean, stddev**2)``."""
    if not stddev > 0:
        raise DomainError(f"stddev must be positive, got {stddev}")
    shape = check_shape(shape)
    if len(ranks.dims) != len(shape):
        raise InvariantError("ranks and shape disagree on order")
    rng = np.random.default_rng(seed)
    factors = [rng.normal(mean, stddev, size=(I, J)) for I, J in zip(shape, ranks.dims)]
    kruskal = [rng.normal(mean, stddev, size=(J, ranks.r_core)) for J in ranks.dims]
    return TuckerModel(shape, ranks, factors, kruskal)


# -- per-observation rows and columns ---------------------------------------


def _check_subs(model, subs):
    s = np.asarray(subs, dtype=np.int64)
    if s.shape[-1] != model.order:
        raise DomainError("coordinate order mismatch")
    if np.any(s < 0) or np.any(s >= np.asarray(model.shape)):
        raise DomainError(f"coordinate outside model shape {model.shape}")
    return s


def kron_row_excluding(model: TuckerModel, sub, n: int) -> np.ndarray:
    """Row of ``S^(n) = A^(N) (x) ... (x) A^(1)`` (mode `n` skipped) for one entry.

    `sub` is a 0-based coordinate.  Entry ``col`` equals
    ``prod_{k != n} A[k][i_k, j_k]`` with ``col`` laid out like the columns
    of ``core_unfold(core, n)``.
    """
    s = _check_subs(model, sub)
    rows = [model.factors[k][s[k]][None, :] for k in range(model.order) if k != n]
    return kron_rows(rows)[0]


def kron_rows_excluding(model: TuckerModel, subs: np.ndarray, n: int, out=None) -> np.ndarray:
    """Batched :func:`kron_row_excluding` for ``(m, N)`` 0-based subscripts."""
    rows = [model.factors[k][subs[:, k]] for k in range(model.order) if k != n]
    return kron_rows(rows, out=out)


def e_column(model: TuckerModel, sub, n: int) -> np.ndarray:
    """``G^(n) s`` for one entry: length ``J_n``; ``A[n][i_n] @ e`` is the prediction."""
    return model.core_unfoldings[n] @ kron_row_excluding(model, sub, n)


def e_columns(model: TuckerModel, subs: np.ndarray, n: int, s_buf=None, out=None) -> np.ndarray:
    """Batched E columns, returned as an ``(m, J_n)`` array (one row per entry)."""
    S = kron_rows_excluding(model, subs, n, out=s_buf)
    return np.matmul(S, model.core_unfoldings[n].T, out=out)


def predict_entry(model: TuckerModel, sub) -> float:
    """Model value at one 0-based coordinate, computed through mode 0's E column."""
    s = _check_subs(model, sub)
    return float(model.factors[0][s[0]] @ e_column(model, s, 0))


def predict(model: TuckerModel, subs, chunk: int = 65536) -> np.ndarray:
    """Vectorized predictions for ``(m, N)`` 0-based subscripts."""
    subs = _check_subs(model, subs).reshape(-1, model.order)
    out = np.empty(subs.shape[0])
    for lo in range(0, subs.shape[0], chunk):
        sl = subs[lo:lo + chunk]
        E = e_columns(model, sl, 0)
        out[lo:lo + chunk] = np.einsum("ij,ij->i", model.factors[0][sl[:, 0]], E)
    return out


# -- serialization ------------------------------------------------------------

_HEADER = struct.Struct("<8sII")


def serialize(model: TuckerModel, path) -> None:
    """Write a versioned little-endian binary model file.

    Layout: magic, version (u32), N (u32), dims (N x u64), J (N x u64),
    R_core (u64), then every ``B[n]`` and every ``A[n]`` as row-major f64.
    """
    N = model.order
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, N),
        np.asarray(model.shape, dtype="<u8").tobytes(),
        np.asarray(model.ranks.dims, dtype="<u8").tobytes(),
        np.asarray([model.ranks.r_core], dtype="<u8").tobytes(),
    ]
    parts += [np.ascontiguousarray(B, dtype="<f8").tobytes() for B in model.kruskal]
    parts += [np.ascontiguousarray(A, dtype="<f8").tobytes() for A in model.factors]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def deserialize(path) -> TuckerModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated header")
    magic, version, N = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if not 1 <= N <= 64:
        raise ModelFormatError(f"implausible order {N}")
    pos = _HEADER.size
    need = pos + 8 * (2 * N + 1)
    if len(data) < need:
        raise ModelFormatError("truncated dimension block")
    dims = np.frombuffer(data, dtype="<u8", count=N, offset=pos).astype(np.int64)
    J = np.frombuffer(data, dtype="<u8", count=N, offset=pos + 8 * N).astype(np.int64)
    R = int(np.frombuffer(data, dtype="<u8", count=1, offset=pos + 16 * N)[0])
    pos = need
    ranks = Ranks(tuple(J.tolist()), R)
    shape = check_shape(dims.tolist())
    expected = pos + 8 * (sum(j * R for j in ranks.dims) + sum(i * j for i, j in zip(shape, ranks.dims)))
    if len(data) != expected:
        raise ModelFormatError(f"file has {len(data)} bytes, expected {expected}")
    kruskal, factors = [], []
    for j in ranks.dims:
        kruskal.append(np.frombuffer(data, dtype="<f8", count=j * R, offset=pos).reshape(j, R).copy())
        pos += 8 * j * R
    for i, j in zip(shape, ranks.dims):
        factors.append(np.frombuffer(data, dtype="<f8", count=i * j, offset=pos).reshape(i, j).copy())
        pos += 8 * i * j
    return TuckerModel(shape, ranks, factors, kruskal)
