import numpy as np
import pytest

from sptucker import CooTensor, HyperParams, Ranks, init_gaussian
from sptucker.datasets import make_synthetic


def random_model(rng, shape, dims, r_core, mean=0.0, std=1.0):
    ranks = Ranks(dims, r_core)
    return init_gaussian(shape, ranks, mean, std, seed=int(rng.integers(2**31)))


def random_tensor(rng, shape, nnz):
    total = int(np.prod(shape))
    lin = np.sort(rng.choice(total, size=min(nnz, total), replace=False))
    subs = np.stack(np.unravel_index(lin, shape), axis=1)
    vals = rng.standard_normal(lin.size)
    vals[vals == 0] = 1.0
    return CooTensor(subs, vals, shape)


def random_instance(rng, order=None, max_dim=6, max_rank=3, max_rcore=3, density=0.5):
    order = order or int(rng.integers(3, 5))
    shape = tuple(int(v) for v in rng.integers(2, max_dim + 1, size=order))
    dims = tuple(int(v) for v in rng.integers(1, max_rank + 1, size=order))
    r_core = int(rng.integers(1, min(min(dims), max_rcore) + 1))
    model = random_model(rng, shape, dims, r_core, mean=0.0, std=0.7)
    nnz = max(2, int(density * np.prod(shape)))
    return model, random_tensor(rng, shape, nnz)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    """20x20x20, rank (3,3,3) truth, 10% observed, noise 0.01."""
    return make_synthetic((20, 20, 20), Ranks((3, 3, 3), 3), density=0.1, noise=0.01, seed=0)


@pytest.fixture
def fast_hyper():
    return HyperParams(core_dims=(3, 3, 3), r_core=3, lr_a=0.15, lr_b=0.6, reg_a=1e-4, reg_b=1e-4,
                       batch_m=10**6, epochs=5, threads=1, strategy="serial",
                       init_mean=0.0, init_std=0.5)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
