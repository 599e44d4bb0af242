import numpy as np
import pytest

from mapsearch.accel import AcceleratorConfig, preset
from mapsearch.costmodel import make_ctx
from mapsearch.dataset import apply_norm_dataset, fit_norm, generate
from mapsearch.surrogate import DESK_HIDDEN, TrainConfig, init_model, train
from mapsearch.workload import Problem

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# generous single-PE machine: every tile fits, so only structure matters
UNIT = preset("unit")
DESK = preset("desk")
TINY = preset("tiny")
# few banks keep exhaustive enumeration cheap
SMALL = AcceleratorConfig(num_pes=4, l2_capacity=64, l1_capacity=16, l2_banks=4, l1_banks=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ctx_of(kind, dims, accel=DESK):
    return make_ctx(Problem(kind, dims), accel)


def small_model(kind, accel, n=3000, epochs=10, seed=0, activation="relu"):
    ds = generate(accel, kind, None, n, seed)
    st = fit_norm(ds)
    Xtr, Ytr = apply_norm_dataset(st, ds, test=False)
    m = init_model((Xtr.shape[1], *DESK_HIDDEN, Ytr.shape[1]), activation, seed, kind=kind, n_pid=ds.n_dims)
    m.norm = st
    m, _ = train(m, Xtr, Ytr, TrainConfig(epochs=epochs, seed=seed))
    return m


@pytest.fixture(scope="session")
def conv1d_small_model():
    return small_model("conv1d", DESK)
