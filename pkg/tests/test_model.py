import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sptucker import Ranks, TuckerModel, deserialize, init_gaussian, predict, predict_entry
from sptucker import reconstruct_core, serialize
from sptucker import oracle
from sptucker.exceptions import DomainError, InvariantError, ModelFormatError
from sptucker.model import FORMAT_VERSION, core_fold, core_unfold, e_column, kron_row_excluding
from sptucker.sptensor import unfold_col_index

from conftest import random_model


def test_ranks_invariants():
    assert Ranks((3, 4), 3).core_size == 12
    with pytest.raises(InvariantError):
        Ranks((3, 2), 3)
    with pytest.raises(InvariantError):
        Ranks((0, 2), 1)


def test_init_gaussian_statistics():
    m = init_gaussian((100, 100), Ranks((50, 50), 5), 0.5, 0.1, seed=1)
    sample = np.concatenate([A.ravel() for A in m.factors])
    assert sample.size == 10**4
    assert 0.49 <= sample.mean() <= 0.51
    assert 0.09 <= sample.std() <= 0.11


def test_init_gaussian_degenerate_and_deterministic():
    m = init_gaussian((3, 4), Ranks((2, 2), 1), 0.5, 1e-12, seed=0)
    assert np.allclose(m.factors[0], 0.5, atol=1e-9)
    with pytest.raises(DomainError):
        init_gaussian((3, 4), Ranks((2, 2), 1), 0.5, 0.0)
    a = init_gaussian((3, 4, 5), Ranks((2, 2, 2), 2), seed=7)
    b = init_gaussian((3, 4, 5), Ranks((2, 2, 2), 2), seed=7)
    assert a.parameters_equal(b)


def test_reconstruct_core_examples():
    G = reconstruct_core([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])])
    np.testing.assert_array_equal(G, [[3, 4], [6, 8]])
    assert not reconstruct_core([np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((4, 3))]).any()


def test_reconstruct_core_brute_force(rng):
    for _ in range(5):
        B = [rng.standard_normal((j, 2)) for j in (3, 4, 2)]
        np.testing.assert_allclose(reconstruct_core(B), oracle.brute_force_core(B), atol=1e-12)


def test_core_unfold_examples(rng):
    G = np.array([[3.0, 4.0], [6.0, 8.0]])
    np.testing.assert_array_equal(core_unfold(G, 0), G)
    np.testing.assert_array_equal(core_unfold(G, 1), [[3, 6], [4, 8]])
    G = rng.standard_normal((2, 3, 2))
    for n in range(3):
        U = core_unfold(G, n)
        np.testing.assert_array_equal(core_fold(U, n, G.shape), G)
        for j in itertools.product(*(range(s) for s in G.shape)):
            col = unfold_col_index(G.shape, tuple(np.array(j) + 1), n + 1) - 1
            assert U[j[n], col] == G[j]


def test_kron_row_matches_np_kron(rng):
    m = random_model(rng, (3, 4, 5, 2), (2, 3, 2, 2), 2)
    for n in range(4):
        S = oracle.dense_S(m, n)
        for sub in [(0, 0, 0, 0), (2, 3, 4, 1), (1, 2, 3, 0)]:
            rest = [sub[k] for k in range(4) if k != n]
            dims = [m.shape[k] for k in range(4) if k != n]
            row = np.ravel_multi_index(rest, dims, order="F")
            # row of np.kron(A_N, ..., A_1) indexed like the data unfolding
            np.testing.assert_allclose(kron_row_excluding(m, sub, n), S[row], atol=1e-14)


def test_kron_row_two_modes(rng):
    m = random_model(rng, (3, 4), (2, 3), 2)
    np.testing.assert_array_equal(kron_row_excluding(m, (1, 2), 0), m.factors[1][2])
    ones = TuckerModel((2, 2, 2), Ranks((2, 2, 2), 1), [np.ones((2, 2))] * 3, [np.ones((2, 1))] * 3)
    assert np.all(kron_row_excluding(ones, (1, 0, 1), 1) == 1.0)


def test_identity_factors_return_core(rng):
    shape = (3, 2, 2)
    B = [rng.standard_normal((j, 2)) for j in shape]
    m = TuckerModel(shape, Ranks(shape, 2), [np.eye(s) for s in shape], B)
    for sub in itertools.product(*(range(s) for s in shape)):
        assert predict_entry(m, sub) == pytest.approx(m.core[sub], abs=1e-14)


def test_zero_core_predicts_zero(rng):
    m = random_model(rng, (3, 2, 2), (2, 2, 2), 1)
    m.kruskal[1][:] = 0.0
    m.refresh_core()
    assert predict_entry(m, (1, 1, 1)) == 0.0
    assert not e_column(m, (0, 1, 0), 2).any()


def test_delta_core_e_column():
    # core is 1 on its diagonal, so e picks products of matching factor entries
    shape = (2, 2, 2)
    rng = np.random.default_rng(4)
    A = [rng.standard_normal((2, 2)) for _ in range(3)]
    B = [np.eye(2) for _ in range(3)]
    m = TuckerModel(shape, Ranks((2, 2, 2), 2), A, B)
    sub = (1, 0, 1)
    e = e_column(m, sub, 0)
    np.testing.assert_allclose(e, [A[1][0, 0] * A[2][1, 0], A[1][0, 1] * A[2][1, 1]])


def test_predict_matches_dense_chain(rng):
    for _ in range(5):
        m = random_model(rng, (3, 2, 2), (2, 2, 2), 2)
        X = oracle.dense_reconstruct(m)
        for sub in itertools.product(*(range(s) for s in m.shape)):
            assert abs(predict_entry(m, sub) - X[sub]) <= 1e-12
    m = random_model(rng, (10, 10, 10, 10), (3, 2, 4, 2), 2)
    X = oracle.dense_reconstruct(m)
    subs = np.stack(np.unravel_index(np.arange(10**4), m.shape), axis=1)
    assert np.max(np.abs(predict(m, subs) - X.ravel())) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prediction_consistent_across_modes(seed):
    rng = np.random.default_rng(seed)
    order = int(rng.integers(2, 5))
    shape = tuple(int(v) for v in rng.integers(1, 5, size=order))
    dims = tuple(int(v) for v in rng.integers(1, 4, size=order))
    m = random_model(rng, shape, dims, int(rng.integers(1, min(dims) + 1)))
    sub = tuple(int(rng.integers(s)) for s in shape)
    vals = [m.factors[n][sub[n]] @ e_column(m, sub, n) for n in range(order)]
    ref = vals[0]
    for v in vals[1:]:
        assert abs(v - ref) <= 1e-10 * max(1.0, abs(ref))


def test_cache_coherence(rng):
    m = random_model(rng, (3, 4, 2), (2, 2, 2), 2)
    m.kruskal[0] += 1.0
    m.refresh_core()
    G = reconstruct_core(m.kruskal)
    assert np.array_equal(m.core, G)
    for n in range(3):
        assert np.array_equal(m.core_unfoldings[n], core_unfold(G, n))


def test_predict_rejects_out_of_range(rng):
    m = random_model(rng, (3, 4), (2, 2), 1)
    with pytest.raises(DomainError):
        predict(m, [[3, 0]])


def test_serialize_round_trip(tmp_path, rng):
    m = random_model(rng, (5, 6, 7), (3, 2, 4), 2)
    p = tmp_path / "m.bin"
    serialize(m, p)
    back = deserialize(p)
    assert back.parameters_equal(m)
    assert np.array_equal(back.core, m.core)
    serialize(back, tmp_path / "m2.bin")
    assert p.read_bytes() == (tmp_path / "m2.bin").read_bytes()


def test_serialize_errors(tmp_path, rng):
    m = random_model(rng, (5, 6, 7), (3, 2, 4), 2)
    p = tmp_path / "m.bin"
    serialize(m, p)
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ModelFormatError):
        deserialize(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(raw[:10])
    with pytest.raises(ModelFormatError):
        deserialize(tmp_path / "h.bin")
    (tmp_path / "v.bin").write_bytes(raw[:8] + (FORMAT_VERSION + 1).to_bytes(4, "little") + raw[12:])
    with pytest.raises(ModelFormatError):
        deserialize(tmp_path / "v.bin")
    (tmp_path / "g.bin").write_bytes(b"NOTAMODL" + raw[8:])
    with pytest.raises(ModelFormatError):
        deserialize(tmp_path / "g.bin")
    # R_core field is the u64 after the header, dims and ranks
    off = 16 + 8 * 6
    bad = raw[:off] + (5).to_bytes(8, "little") + raw[off + 8:]
    (tmp_path / "r.bin").write_bytes(bad)
    with pytest.raises(InvariantError):
        deserialize(tmp_path / "r.bin")
