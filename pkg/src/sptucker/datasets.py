"""Synthetic low-rank tensors and a MovieLens-100K converter."""

from __future__ import annotations

import datetime as _dt
import math
import os
from pathlib import Path

import numpy as np

from .exceptions import DataError, EmptyTensorError, ParseError
from .model import Ranks, TuckerModel, predict
from .sptensor import CooTensor, check_shape

MOVIELENS_ENV = "SPTUCKER_MOVIELENS"
MOVIELENS_SHAPE = (943, 1682, 2, 24)
MOVIELENS_FIRST_YEAR = 1997


def sample_coordinates(shape, nnz: int, rng: np.random.Generator) -> np.ndarray:
    """`nnz` distinct 0-based coordinates drawn uniformly, sorted by linear index."""
    shape = check_shape(shape)
    total = math.prod(shape)
    if not 0 < nnz <= total:
        raise DataError(f"cannot draw {nnz} distinct entries from {total}")
    if total <= 50_000_000:
        lin = np.sort(rng.choice(total, size=nnz, replace=False))
    else:
        # oversample then deduplicate; a couple of rounds suffice at low density
        lin = np.empty(0, dtype=np.int64)
        while lin.size < nnz:
            extra = rng.integers(0, total, size=int((nnz - lin.size) * 1.1) + 16)
            lin = np.unique(np.concatenate([lin, extra]))
        lin = np.sort(rng.choice(lin, size=nnz, replace=False))
    return np.stack(np.unravel_index(lin, shape), axis=1).astype(np.int64)


def random_truth(shape, ranks: Ranks, seed: int = 0) -> TuckerModel:
    """Model with standard-normal factors and Kruskal matrices.

    Factor columns are scaled so the reconstructed entries have roughly unit
    variance regardless of the ranks.
    """
    rng = np.random.default_rng(seed)
    N = len(shape)
    factors = [rng.standard_normal((I, j)) for I, j in zip(shape, ranks.dims)]
    kruskal = [rng.standard_normal((j, ranks.r_core)) for j in ranks.dims]
    # var(entry) ~ R * prod_n J_n for unit-normal parameters
    scale = (ranks.r_core * math.prod(ranks.dims)) ** (-0.5 / N)
    factors = [A * scale for A in factors]
    return TuckerModel(shape, ranks, factors, kruskal)


def make_synthetic(
    shape,
    ranks: Ranks,
    density: float = 0.1,
    noise: float = 0.01,
    seed: int = 0,
    nnz: int | None = None,
    chunk: int = 262144,
):
    """Observed entries of a random low-rank model plus Gaussian noise.

    Parameters
    ----------
    shape : sequence of int
    ranks : Ranks
        Ranks of the generating model.
    density : float
        Fraction of entries observed; ignored when `nnz` is given.
    noise : float
        Standard deviation of the additive noise.
    seed : int

    Returns
    -------
    tensor : CooTensor
    truth : TuckerModel
    """
    shape = check_shape(shape)
    truth = random_truth(shape, ranks, seed)
    rng = np.random.default_rng(seed + 7919)
    if nnz is None:
        nnz = max(1, int(round(density * math.prod(shape))))
    subs = sample_coordinates(shape, nnz, rng)
    vals = np.empty(nnz)
    for lo in range(0, nnz, chunk):
        vals[lo : lo + chunk] = predict(truth, subs[lo : lo + chunk])
    vals += noise * rng.standard_normal(nnz)
    # exact zeros are "unobserved" in the file format
    vals[vals == 0.0] = np.finfo(float).tiny
    return CooTensor(subs, vals, shape), truth


def movielens_path(path=None) -> Path:
    """Locate ``u.data``: explicit path, ``$SPTUCKER_MOVIELENS``, or a few usual spots."""
    cands = []
    if path is not None:
        cands.append(Path(path))
    if os.environ.get(MOVIELENS_ENV):
        cands.append(Path(os.environ[MOVIELENS_ENV]))
    cands += [Path("ml-100k"), Path.home() / "ml-100k", Path("data/ml-100k")]
    for c in cands:
        f = c / "u.data" if c.is_dir() else c
        if f.is_file():
            return f
    raise DataError(
        f"MovieLens-100K u.data not found; set ${MOVIELENS_ENV} to the file or its directory"
    )


def load_movielens_100k(path=None) -> CooTensor:
    """Ratings as a user x movie x year x hour tensor of shape ``943 x 1682 x 2 x 24``.

    Each ``user item rating timestamp`` line becomes one entry; the
    timestamp supplies the year (1997 or 1998) and the UTC hour of day.
    Repeated (user, movie, year, hour) cells keep the last rating.
    """
    f = movielens_path(path)
    subs, vals = [], []
    with open(f) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", lineno)
            try:
                u, i, r, ts = (int(p) for p in parts)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            t = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
            subs.append((u - 1, i - 1, t.year - MOVIELENS_FIRST_YEAR, t.hour))
            vals.append(float(r))
    if not subs:
        raise EmptyTensorError(f"{f} has no ratings")
    subs = np.asarray(subs, dtype=np.int64)
    vals = np.asarray(vals)
    lin = np.ravel_multi_index(subs.T, MOVIELENS_SHAPE)
    _, last = np.unique(lin[::-1], return_index=True)
    keep = np.sort(len(lin) - 1 - last)
    return CooTensor(subs[keep], vals[keep], MOVIELENS_SHAPE)
