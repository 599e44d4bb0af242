import csv
import io

import numpy as np
import pytest
from conftest import DESK, SMALL, ctx_of

from mapsearch import costmodel
from mapsearch.mapspace import encode, enumerate_space, get_projection, is_member, read_mappings, sample_mappings
from mapsearch.search import (
    TRACE_COLUMNS,
    GaConfig,
    GradSearchConfig,
    ModelMismatchError,
    SaConfig,
    SearchBudget,
    TrueObjective,
    accept,
    genetic_search,
    gradient_search,
    random_search,
    simulated_annealing,
    traces_to_csv,
    write_traces,
)
from mapsearch.search.base import crossover_groups


def test_budget_validation():
    with pytest.raises(ValueError):
        SearchBudget()
    with pytest.raises(ValueError):
        SearchBudget(max_iterations=10, max_wall_seconds=1.0)
    with pytest.raises(ValueError):
        SearchBudget(max_iterations=0)
    assert SearchBudget(max_wall_seconds=0.5).record_time


def test_accept_rule():
    rng = np.random.default_rng(0)
    assert all(accept(1.0, 2.0, 1e-9, rng) for _ in range(100))
    assert accept(2.0, 2.0, 1e-9, rng)
    n, T = 100_000, 3.0
    hits = sum(accept(1.0 + T, 1.0, T, rng) for _ in range(n))
    p = np.exp(-1.0)
    assert abs(hits / n - p) <= 3 * np.sqrt(p * (1 - p) / n)
    assert sum(accept(1.5, 1.0, 1e-6, rng) for _ in range(10_000)) == 0
    with pytest.raises(ValueError):
        accept(1.0, 2.0, 0.0, rng)


@pytest.fixture
def conv_ctx():
    return ctx_of("conv1d", (8, 3), DESK)


def test_mm_alpha_zero_holds_between_injections(conv_ctx, conv1d_small_model):
    tr = gradient_search(conv_ctx, conv1d_small_model, GradSearchConfig(alpha=0.0, seed=1), SearchBudget(60))
    for s in tr.steps:
        if s.iteration % 10:
            assert s.mapping == tr.steps[s.iteration - 1].mapping


def test_mm_zero_gradient_only_injections_move(conv_ctx, conv1d_small_model):
    flat = conv1d_small_model.copy()
    flat.weights = [np.zeros_like(W) for W in flat.weights]
    flat.biases = [np.zeros_like(b) for b in flat.biases]
    tr = gradient_search(conv_ctx, flat, GradSearchConfig(seed=2), SearchBudget(50))
    for s in tr.steps[1:]:
        if s.iteration % 10:
            assert s.mapping == tr.steps[s.iteration - 1].mapping
    assert tr.extra["injections"] == 4
    assert len({s.mapping for s in tr.steps}) > 1


def test_mm_trace_contract(conv_ctx, conv1d_small_model):
    tr = gradient_search(conv_ctx, conv1d_small_model, GradSearchConfig(seed=3), SearchBudget(200))
    assert len(tr) == 200
    assert all(is_member(conv_ctx, s.mapping) for s in tr.steps)
    best = tr.best_curve
    assert np.all(np.diff(best) <= 0)
    assert best[-1] == min(s.predicted_obj for s in tr.steps)
    assert all(s.true_obj is None for s in tr.steps)
    assert tr.best_true_obj_final == TrueObjective(conv_ctx)(tr.best_mapping)


def test_mm_refuses_mismatched_model(conv1d_small_model):
    with pytest.raises(ModelMismatchError):
        gradient_search(ctx_of("mttkrp", (4, 4, 4, 4), DESK), conv1d_small_model)
    other_accel = ctx_of("conv1d", (8, 3), SMALL)
    with pytest.raises(ModelMismatchError):
        gradient_search(other_accel, conv1d_small_model)


def _count_evals(monkeypatch):
    calls = []
    real = costmodel.evaluate_ctx

    def counting(*a, **k):
        calls.append(1)
        return real(*a, **k)

    monkeypatch.setattr(costmodel, "evaluate_ctx", counting)
    return calls


def test_evaluation_accounting(monkeypatch, conv_ctx, conv1d_small_model):
    calls = _count_evals(monkeypatch)
    gradient_search(conv_ctx, conv1d_small_model, GradSearchConfig(seed=0), SearchBudget(100))
    assert len(calls) == 1
    for run in (
        lambda b: random_search(conv_ctx, b, 0),
        lambda b: simulated_annealing(conv_ctx, SaConfig(seed=0), b),
        lambda b: genetic_search(conv_ctx, GaConfig(population=10, seed=0), b),
    ):
        calls.clear()
        tr = run(SearchBudget(57))
        assert len(calls) == len(tr) == tr.n_true_evals == 57


def test_all_searchers_deterministic(conv_ctx, conv1d_small_model):
    runs = {
        "mm": lambda: gradient_search(conv_ctx, conv1d_small_model, GradSearchConfig(seed=4), SearchBudget(80)),
        "sa": lambda: simulated_annealing(conv_ctx, SaConfig(seed=4), SearchBudget(80)),
        "ga": lambda: genetic_search(conv_ctx, GaConfig(population=12, seed=4), SearchBudget(80)),
        "random": lambda: random_search(conv_ctx, SearchBudget(80), 4),
    }
    for name, run in runs.items():
        a, b = run(), run()
        assert traces_to_csv([a]) == traces_to_csv([b]), name
        assert [s.mapping for s in a.steps] == [s.mapping for s in b.steps], name
        assert a.extra.get("accepted_injections") == b.extra.get("accepted_injections")


def test_wall_clock_budget(conv_ctx):
    tr = random_search(conv_ctx, SearchBudget(max_wall_seconds=0.2), 0)
    assert len(tr) > 0
    assert all(s.elapsed_ns is not None for s in tr.steps)
    assert tr.steps[-1].elapsed_ns < 0.5e9


def test_sa_infinite_temperature_is_a_random_walk(conv_ctx):
    tr = simulated_annealing(conv_ctx, SaConfig(T0=1e300, cooling=1.0, seed=1), SearchBudget(500))
    assert tr.extra["acceptance_rate"] == 1.0


def test_sa_zero_temperature_is_greedy():
    ctx = ctx_of("conv1d", (8, 3), SMALL)
    tr = simulated_annealing(ctx, SaConfig(T0=1e-300, cooling=1.0, seed=1), SearchBudget(400))
    assert np.all(np.diff(tr.best_curve) <= 0)
    # with no uphill moves the incumbent after each step is the running best
    assert tr.extra["acceptance_rate"] < 1.0
    assert tr.best_true_obj_final == min(s.true_obj for s in tr.steps)


def test_sa_autotune_targets_acceptance(conv_ctx):
    tr = simulated_annealing(conv_ctx, SaConfig(seed=0), SearchBudget(300))
    assert tr.extra["T0"] > 0
    assert 0 < tr.extra["cooling"] < 1


def test_ga_frozen_population():
    ctx = ctx_of("conv1d", (8, 3), SMALL)
    cfg = GaConfig(population=20, crossover=0.0, mutation=0.0, elitism=20, seed=5)
    tr = genetic_search(ctx, cfg, SearchBudget(200))
    initial = sample_mappings(ctx, np.random.default_rng(5), 20)
    assert tr.extra["population"] == initial
    assert tr.extra["generations"] == 0


def test_ga_population_clamped_to_space():
    acc = SMALL.with_(l2_banks=3)
    ctx = ctx_of("conv1d", (1, 1), acc)
    tr = genetic_search(ctx, GaConfig(population=100, seed=0), SearchBudget(50))
    assert len(tr.extra["population"]) == 8


def test_crossover_children_are_members():
    ctx = ctx_of("mttkrp", (6, 4, 4, 6), DESK)
    rng = np.random.default_rng(0)
    groups = crossover_groups(ctx)
    parents = sample_mappings(ctx, rng, 200)
    for _ in range(5000):
        i, j = rng.integers(len(parents), size=2)
        a, b = encode(ctx, parents[i]), encode(ctx, parents[j])
        for g in groups:
            if rng.random() < 0.5:
                a[g], b[g] = b[g].copy(), a[g].copy()
        assert is_member(ctx, get_projection(ctx, a))
        assert is_member(ctx, get_projection(ctx, b))


def test_random_search_basics(conv_ctx):
    tr = random_search(conv_ctx, SearchBudget(1), 3)
    assert len(tr) == 1 and tr.best_true_obj_final == tr.steps[0].true_obj
    assert traces_to_csv([random_search(conv_ctx, SearchBudget(30), 3)]) == traces_to_csv(
        [random_search(conv_ctx, SearchBudget(30), 3)]
    )


def test_random_search_matches_order_statistic():
    ctx = ctx_of("conv1d", (6, 2), SMALL)
    obj = TrueObjective(ctx)
    v = np.sort([obj(m) for m in enumerate_space(ctx)])
    N, k = len(v), 5
    i = np.arange(1, N + 1)
    p = ((N - i + 1) / N) ** k - ((N - i) / N) ** k  # P(min of k uniform draws is v_i)
    mean = float(p @ v)
    sd = float(np.sqrt(p @ (v - mean) ** 2))
    runs = 400
    got = np.mean([random_search(ctx, SearchBudget(k), s).best_true_obj_final for s in range(runs)])
    assert abs(got - mean) <= 4 * sd / np.sqrt(runs)


def test_ga_finds_optimum_on_tiny_space():
    ctx = ctx_of("conv1d", (6, 2), SMALL)
    obj = TrueObjective(ctx)
    space = list(enumerate_space(ctx))
    opt = min(obj(m) for m in space)
    budget = SearchBudget(10 * len(space))
    hits = sum(genetic_search(ctx, GaConfig(seed=s), budget).best_true_obj_final <= opt * (1 + 1e-12)
               for s in range(20))
    assert hits >= 15


def test_trace_files(tmp_path, conv_ctx):
    traces = [random_search(conv_ctx, SearchBudget(5), s) for s in range(3)]
    path = tmp_path / "t.csv"
    mpath = write_traces(path, traces, conv_ctx, ["seed=1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=1"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 16
    maps = read_mappings(mpath, conv_ctx)
    assert maps == [s.mapping for tr in traces for s in tr.steps]
    obj = TrueObjective(conv_ctx)
    for row, m in zip(rows[1:], maps):
        assert float(row[5]) == obj(m)
