"""Brute-force reference constructions, checked against each other and frozen values."""

import numpy as np
import pytest

from sptucker import Ranks, TuckerModel
from sptucker import oracle
from sptucker.exceptions import DomainError

from conftest import random_model

# hand-picked parameters with short decimal expansions
FACTORS = [
    np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]),
    np.array([[0.2, 1.0], [-0.4, 0.3]]),
    np.array([[1.5, -0.5], [0.0, 2.0]]),
]
KRUSKAL = [
    np.array([[1.0, 0.5], [-1.0, 2.0]]),
    np.array([[0.3, -0.2], [1.0, 1.0]]),
    np.array([[2.0, 0.0], [0.5, -1.5]]),
]
FROZEN_CORE = [0.6, 0.3, 2.0, -0.25, -0.6, 0.45, -2.0, -3.5]
FROZEN_X = [0.325, -14.02, 0.7875, -5.31, 3.1125, 6.63, 0.24375, 2.265, 9.825, -1.14, 1.9125, -1.17]


def hand_model():
    return TuckerModel((3, 2, 2), Ranks((2, 2, 2), 2), [A.copy() for A in FACTORS],
                       [B.copy() for B in KRUSKAL])


def test_frozen_reconstruction():
    m = hand_model()
    np.testing.assert_allclose(m.core.ravel(), FROZEN_CORE, atol=1e-14)
    np.testing.assert_allclose(oracle.brute_force_core(m.kruskal).ravel(), FROZEN_CORE, atol=1e-14)
    np.testing.assert_allclose(oracle.dense_reconstruct(m).ravel(), FROZEN_X, atol=1e-12)


def test_identity_factors_give_core(rng):
    shape = (2, 3, 2)
    m = TuckerModel(shape, Ranks(shape, 2), [np.eye(s) for s in shape],
                    [rng.standard_normal((s, 2)) for s in shape])
    np.testing.assert_allclose(oracle.dense_reconstruct(m), m.core, atol=1e-14)


def test_zero_core_gives_zero(rng):
    m = random_model(rng, (3, 2, 2), (2, 2, 2), 1)
    m.kruskal[0][:] = 0
    m.refresh_core()
    assert not oracle.dense_reconstruct(m).any()


def test_matrix_case(rng):
    m = random_model(rng, (4, 5), (3, 2), 2)
    A1, A2 = m.factors
    np.testing.assert_allclose(oracle.dense_reconstruct(m), A1 @ m.core @ A2.T, atol=1e-12)


def test_vec_identity(rng):
    # vec_n(Xhat) = H vec_n(G) for every mode
    for _ in range(10):
        order = int(rng.integers(2, 5))
        shape = tuple(int(v) for v in rng.integers(1, 4, size=order))
        dims = tuple(int(v) for v in rng.integers(1, 3, size=order))
        m = random_model(rng, shape, dims, int(rng.integers(1, min(dims) + 1)))
        X = oracle.dense_reconstruct(m)
        for n in range(order):
            H = oracle.dense_H(m, n)
            np.testing.assert_allclose(H @ oracle.vec_n(m.core, n), oracle.vec_n(X, n), atol=1e-10)


def test_kruskal_term_identity(rng):
    # H O_r b_r equals H applied to the vectorized r-th rank-one term
    m = random_model(rng, (3, 2, 4), (2, 2, 3), 2)
    for n in range(3):
        H = oracle.dense_H(m, n)
        for r in range(2):
            term = oracle.brute_force_core([B[:, r:r + 1] for B in m.kruskal])
            lhs = H @ (oracle.dense_O_r(m.kruskal, n, r) @ m.kruskal[n][:, r])
            np.testing.assert_allclose(lhs, H @ oracle.vec_n(term, n), atol=1e-10)


def test_all_ones_scalar_case():
    m = TuckerModel((1, 1, 1), Ranks((1, 1, 1), 1), [np.array([[2.0]])] * 3, [np.array([[3.0]])] * 3)
    assert oracle.dense_reconstruct(m).shape == (1, 1, 1)
    assert oracle.dense_reconstruct(m)[0, 0, 0] == 8.0 * 27.0
    for n in range(3):
        assert oracle.dense_H(m, n).shape == (1, 1)
        assert oracle.dense_O_r(m.kruskal, n, 0).shape == (1, 1)
        assert oracle.dense_E(m, n).shape == (1, 1)


def test_dense_shapes(rng):
    m = random_model(rng, (3, 2, 4), (2, 2, 3), 2)
    assert oracle.dense_H(m, 1).shape == (24, 12)
    assert oracle.dense_O_r(m.kruskal, 1, 0).shape == (12, 2)
    assert oracle.dense_S(m, 1).shape == (12, 6)
    assert oracle.dense_E(m, 1).shape == (2, 12)


def test_guards():
    m = TuckerModel((2000, 1000), Ranks((1, 1), 1), [np.ones((2000, 1)), np.ones((1000, 1))],
                    [np.ones((1, 1))] * 2)
    with pytest.raises(DomainError):
        oracle.dense_reconstruct(m)
    with pytest.raises(DomainError):
        oracle.dense_H(m, 0)
    with pytest.raises(DomainError):
        oracle.fd_gradient(lambda w: 0.0, [1.0], step=0.0)


def test_fd_gradient_examples():
    g = oracle.fd_gradient(lambda w: float(w[0] ** 2), [3.0], step=1e-4)
    assert abs(g[0] - 6.0) <= 1e-7
    assert not oracle.fd_gradient(lambda w: 4.2, np.ones(5)).any()


def test_relative_error_metric():
    np.testing.assert_allclose(oracle.relative_error([1.5, 10.0], [1.0, 8.0]), [0.5, 0.25])


def test_dense_h_rows_match_full(rng):
    m = random_model(rng, (3, 2, 4), (2, 2, 3), 2)
    subs = np.array([[0, 0, 0], [2, 1, 3], [1, 0, 2]])
    for n in range(3):
        full = oracle.dense_H(m, n)[oracle.entry_rows(m, subs, n)]
        np.testing.assert_array_equal(oracle.dense_H(m, n, subs), full)
