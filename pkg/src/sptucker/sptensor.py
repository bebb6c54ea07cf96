"""Sparse COO tensor storage, unfolding/vectorization index algebra and ingestion.

Two index conventions live in this module:

* The index-algebra functions (:func:`unfold_col_index`, :func:`vec_index`,
  :func:`invert_vec_index`) use **1-based** coordinates, modes and linear
  indices, exactly like the textbook matricization formulas.
* :class:`CooTensor` stores **0-based** subscripts in ``subs`` (what numpy
  wants).  Files on disk are 1-based.
"""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    DataError,
    DegenerateSplitError,
    DomainError,
    EmptyTensorError,
    ParseError,
)

_INT64_LIMIT = 2**63 - 1
_SPLIT = re.compile(r"[,\s]+")


def check_shape(dims: Sequence[int]) -> Tuple[int, ...]:
    """Validate tensor dimensions and return them as a tuple of ints.

    Raises
    ------
    DomainError
        If the order is below 2, a dimension is < 1, or the element count
        does not fit in a signed 64-bit integer.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise DomainError(f"tensor order must be >= 2, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise DomainError(f"all dimensions must be >= 1, got {dims}")
    if math.prod(dims) > _INT64_LIMIT:
        raise DomainError(f"element count of shape {dims} overflows int64")
    return dims


def _check_mode(shape, n):
    if not 1 <= n <= len(shape):
        raise DomainError(f"mode {n} outside 1..{len(shape)}")


def _as_coords(shape, coord):
    c = np.asarray(coord, dtype=np.int64)
    if c.shape[-1:] != (len(shape),):
        raise DomainError(f"coordinate of length {c.shape[-1:]} for order-{len(shape)} tensor")
    dims = np.asarray(shape, dtype=np.int64)
    if np.any(c < 1) or np.any(c > dims):
        raise DomainError(f"coordinate outside 1-based shape {tuple(shape)}")
    return c


def _scalar_or_array(x):
    return int(x) if np.ndim(x) == 0 else x


def unfold_col_index(shape, coord, n: int):
    """Column of the mode-`n` unfolding holding element `coord` (all 1-based).

    ``j = 1 + sum_{k != n} (i_k - 1) * prod_{m < k, m != n} I_m``

    `coord` may be a single tuple or an ``(M, N)`` array; the result is an
    int or an int64 array accordingly.

    >>> unfold_col_index((2, 3, 4), (2, 3, 4), 1)
    12
    """
    shape = check_shape(shape)
    _check_mode(shape, n)
    c = _as_coords(shape, coord)
    j = np.ones(c.shape[:-1], dtype=np.int64)
    stride = 1
    for k, dim in enumerate(shape):
        if k == n - 1:
            continue
        j = j + (c[..., k] - 1) * stride
        stride *= dim
    return _scalar_or_array(j)


def vec_index(shape, coord, n: int):
    """Position of `coord` in the mode-`n` vectorization, ``(j - 1) * I_n + i_n``."""
    shape = check_shape(shape)
    _check_mode(shape, n)
    c = _as_coords(shape, coord)
    j = np.asarray(unfold_col_index(shape, c, n), dtype=np.int64)
    return _scalar_or_array((j - 1) * shape[n - 1] + c[..., n - 1])


def invert_vec_index(shape, k, n: int):
    """Inverse of :func:`vec_index`; returns a 1-based coordinate tuple (or array)."""
    shape = check_shape(shape)
    _check_mode(shape, n)
    k = np.asarray(k, dtype=np.int64)
    total = math.prod(shape)
    if np.any(k < 1) or np.any(k > total):
        raise DomainError(f"linear index outside 1..{total}")
    rest, i_n = np.divmod(k - 1, shape[n - 1])
    out = np.empty(k.shape + (len(shape),), dtype=np.int64)
    out[..., n - 1] = i_n + 1
    for m, dim in enumerate(shape):
        if m == n - 1:
            continue
        rest, r = np.divmod(rest, dim)
        out[..., m] = r + 1
    if out.ndim == 1:
        return tuple(int(v) for v in out)
    return out


class CooTensor:
    """Immutable order-N sparse tensor in coordinate format.

    Parameters
    ----------
    subs : array_like, shape (nnz, N)
        0-based integer subscripts.
    vals : array_like, shape (nnz,)
        Observed values.
    shape : sequence of int, optional
        Dimensions; inferred as per-mode maximum + 1 when omitted.

    Besides the single COO store the tensor keeps, for every mode, a stable
    permutation of the entries grouped by that mode's index together with
    bucket offsets (``mode_groups``).  No matricized copies are made.
    """

    __slots__ = ("subs", "vals", "shape", "_groups")

    def __init__(self, subs, vals, shape=None):
        subs = np.array(subs, dtype=np.int64, copy=True)
        vals = np.array(vals, dtype=np.float64, copy=True).reshape(-1)
        if subs.ndim != 2:
            if subs.size == 0 and shape is not None:
                subs = subs.reshape(0, len(shape))
            else:
                raise DataError("subs must be a 2-D (nnz, N) array")
        if subs.shape[0] != vals.shape[0]:
            raise DataError(f"{subs.shape[0]} coordinates but {vals.shape[0]} values")
        if shape is None:
            if subs.shape[0] == 0:
                raise EmptyTensorError("cannot infer the shape of an empty tensor")
            shape = tuple(int(v) + 1 for v in subs.max(axis=0))
        shape = check_shape(shape)
        if subs.shape[1] != len(shape):
            raise DataError(f"subs have {subs.shape[1]} columns for an order-{len(shape)} shape")
        if subs.size and (subs.min() < 0 or np.any(subs.max(axis=0) >= np.asarray(shape))):
            raise DataError(f"subscript outside shape {shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError("values must be finite")
        if subs.shape[0] > 1:
            lin = np.ravel_multi_index(tuple(subs.T), shape)
            if np.unique(lin).size != lin.size:
                raise DataError("duplicate coordinates")
        subs.flags.writeable = False
        vals.flags.writeable = False
        self.subs = subs
        self.vals = vals
        self.shape = shape
        self._groups = tuple(self._group_mode(n) for n in range(len(shape)))

    def _group_mode(self, n):
        perm = np.argsort(self.subs[:, n], kind="stable")
        counts = np.bincount(self.subs[:, n], minlength=self.shape[n])
        offsets = np.zeros(self.shape[n] + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        perm.flags.writeable = False
        offsets.flags.writeable = False
        return perm, offsets

    @classmethod
    def from_coords(cls, coords, values, shape=None):
        """Build from 1-based coordinates."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.size and coords.min() < 1:
            raise DataError("1-based coordinates must be >= 1")
        return cls(coords - 1, values, shape)

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return self.vals.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """1-based coordinates, shape (nnz, N)."""
        return self.subs + 1

    def mode_group(self, n: int):
        """``(perm, offsets)`` for 0-based mode `n`.

        Entries of row ``i`` are ``perm[offsets[i]:offsets[i + 1]]``.
        """
        return self._groups[n]

    def bucket(self, n: int, i: int) -> np.ndarray:
        perm, offsets = self._groups[n]
        return perm[offsets[i]:offsets[i + 1]]

    def bucket_sizes(self, n: int) -> np.ndarray:
        return np.diff(self._groups[n][1])

    def take(self, idx) -> "CooTensor":
        """Sub-tensor made of the entries `idx`, keeping the full shape."""
        idx = np.asarray(idx, dtype=np.int64)
        return CooTensor(self.subs[idx], self.vals[idx], self.shape)

    def nbytes(self) -> int:
        n = self.subs.nbytes + self.vals.nbytes
        return n + sum(p.nbytes + o.nbytes for p, o in self._groups)

    def __repr__(self):
        return f"CooTensor(shape={self.shape}, nnz={self.nnz})"


ZeroPolicy = Union[str, Tuple[str, float]]


def parse_zero_policy(policy: ZeroPolicy):
    """Normalize ``"reject"``, ``("replace", v)`` or ``"replace:v"``."""
    if isinstance(policy, str):
        if policy == "reject":
            return "reject", None
        if policy.startswith("replace"):
            _, _, v = policy.partition(":")
            return "replace", float(v) if v else 0.5
        raise DomainError(f"unknown zero policy {policy!r}")
    kind, value = policy
    if kind != "replace":
        raise DomainError(f"unknown zero policy {policy!r}")
    return "replace", float(value)


def load_delimited(
    path,
    order: int,
    has_header: bool = False,
    zero_policy: ZeroPolicy = "reject",
    shape=None,
) -> CooTensor:
    """Read a whitespace- or comma-delimited file of ``i_1 ... i_N value`` lines.

    Indices are 1-based.  Blank lines and lines starting with ``#`` are
    ignored.  Zero values raise :class:`DataError` under ``"reject"`` and are
    substituted under ``("replace", v)``.
    """
    kind, replacement = parse_zero_policy(zero_policy)
    coords, values = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if has_header and lineno == 1:
                continue
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            if len(fields) != order + 1:
                raise ParseError(f"expected {order + 1} fields, got {len(fields)}", lineno)
            try:
                idx = [int(f) for f in fields[:order]]
                val = float(fields[order])
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", lineno) from None
            if min(idx) < 1:
                raise ParseError("indices are 1-based", lineno)
            if val == 0.0:
                if kind == "reject":
                    raise DataError(f"line {lineno}: zero value under reject policy")
                val = replacement
            coords.append(idx)
            values.append(val)
    if not values:
        raise EmptyTensorError(f"{path}: no data lines")
    coords = np.asarray(coords, dtype=np.int64)
    if shape is None:
        shape = tuple(int(v) for v in coords.max(axis=0))
    try:
        return CooTensor(coords - 1, values, shape)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_delimited(t: CooTensor, path, delimiter: str = " ") -> None:
    """Write `t` as 1-based ``i_1 ... i_N value`` lines; values round-trip exactly."""
    coords = t.coords
    with open(path, "w") as fh:
        for c, v in zip(coords.tolist(), t.vals.tolist()):
            fh.write(delimiter.join(map(str, c)) + delimiter + repr(v) + "\n")


def train_test_split(t: CooTensor, test_fraction: float, seed: int):
    """Random disjoint split; ``|test| = round(test_fraction * nnz)``."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if t.nnz == 0:
        raise EmptyTensorError("cannot split an empty tensor")
    n_test = int(math.floor(test_fraction * t.nnz + 0.5))
    if n_test == 0 or n_test == t.nnz:
        raise DegenerateSplitError(
            f"fraction {test_fraction} of {t.nnz} entries leaves an empty side"
        )
    perm = np.random.default_rng(seed).permutation(t.nnz)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return t.take(train_idx), t.take(test_idx)


def sample_batch(t: CooTensor, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `m` distinct entry indices uniformly without replacement."""
    if not 1 <= m <= t.nnz:
        raise DomainError(f"batch size {m} outside 1..{t.nnz}")
    return rng.choice(t.nnz, size=m, replace=False).astype(np.int64)


def read_coords(path, order: int):
    """Parse a file of 1-based coordinate lines (no values).

    Returns a list of ``(line_number, tuple | None, error | None)`` records
    so callers can report bad lines individually.
    """
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            try:
                if len(fields) < order:
                    raise ValueError(f"expected {order} indices, got {len(fields)}")
                records.append((lineno, tuple(int(f) for f in fields[:order]), None))
            except ValueError as exc:
                records.append((lineno, None, str(exc)))
    return records
