import numpy as np
import pytest
from conftest import DESK, SMALL, TINY, UNIT, ctx_of
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mapsearch.accel import AcceleratorConfig
from mapsearch.costmodel import (
    EDP,
    CostVector,
    InvalidMappingError,
    Objective,
    access_counts,
    algorithmic_minimum,
    component_names,
    evaluate,
    evaluate_ctx,
    n_components,
    objective_value,
)
from mapsearch.interpreter import simulate
from mapsearch.mapspace import Mapping, enumerate_space, get_mapping, sample_mappings
from mapsearch.workload import DIMS, AlgorithmKind, Problem, required_flops


def _untiled(p: Problem, accel) -> Mapping:
    ctx = ctx_of(p.kind, p.dims, accel)
    full = tuple(int(b) for b in ctx.bounds)
    n, T = ctx.n_dims, ctx.n_tensors
    share = 1 / accel.l2_banks
    return Mapping((full,) * 3, (1,) * n, (tuple(range(n)),) * 3,
                   ((share,) * T, (1 / accel.l1_banks,) * T))


def test_full_residence_fetches_each_word_once():
    p = Problem("conv1d", (8, 2))
    cv = evaluate(UNIT, p, _untiled(p, UNIT))
    # tensors I, O, F: 8, 7 and 2 words
    assert cv.energy[0].tolist() == [8 * 200.0, 7 * 200.0, 2 * 200.0]
    assert cv.energy[0].sum() == (8 + 7 + 2) * UNIT.e_dram
    assert cv.energy_total == pytest.approx(cv.energy.sum() + UNIT.e_mac * required_flops(p))


def test_filter_refetch_example_matches_interpreter():
    # Conv1D(W=8,R=4): R split into an outer DRAM loop R_c and an inner loop R_t of 2
    # placed under W, so the F tile changes on every step of W
    p = Problem("conv1d", (8, 4))
    ctx = ctx_of("conv1d", p.dims, UNIT)
    chains = np.array([[1, 5, 1, 1],   # W: loop at L2
                       [2, 2, 1, 1]])  # R: R_c at DRAM, R_t at L2 inside W
    order = ((1, 0), (0, 1), (0, 1))  # R_c -> W -> R_t
    m = Mapping.from_chains(chains, order, ((1, 1, 1), (1, 1, 1)), UNIT)
    counts = access_counts(ctx, m)
    assert np.array_equal(counts, simulate(UNIT, p, m).counts)
    f = ctx.tensors.index("F")
    assert counts[0, f] == 4  # F crosses DRAM once per word
    assert counts[1, f] == 2 * 5 * 2  # refetched into L1 on every W step
    # R_t last in the L2 nest: swapping it outside W keeps F resident across W
    swapped = Mapping(m.tiles, m.par, ((1, 0), (1, 0), (0, 1)), m.alloc)
    assert access_counts(ctx, swapped)[1, f] == 4
    assert np.array_equal(access_counts(ctx, swapped), simulate(UNIT, p, swapped).counts)


def test_full_utilization_example():
    ctx = ctx_of("conv1d", (10, 3), TINY)
    ms = [m for m in sample_mappings(ctx, np.random.default_rng(0), 300) if np.prod(m.par) == TINY.num_pes]
    assert ms
    for m in ms:
        cv = evaluate_ctx(ctx, m)
        assert cv.utilization == 1.0
        assert cv.cycles == required_flops(ctx.problem) / (TINY.flops_per_pe * TINY.num_pes)


def test_invalid_mapping_rejected():
    ctx = ctx_of("conv1d", (8, 3), DESK)
    m = get_mapping(ctx, 0)
    bad = Mapping(m.tiles, m.par, m.order, (m.alloc[0], (0.5, 0.5, 0.25)))
    with pytest.raises(InvalidMappingError):
        evaluate_ctx(ctx, bad)


def test_component_counts():
    assert n_components("conv1d") == 12
    assert n_components("convlayer") == 12
    assert n_components("mttkrp") == 15
    assert component_names("conv1d")[-3:] == ("energy_total", "cycles", "utilization")


def test_lower_bound_examples():
    one_pe = AcceleratorConfig(num_pes=1, flops_per_pe=1)
    p = Problem("conv1d", (8, 3))
    lb = algorithmic_minimum(one_pe, p)
    assert lb.cycles == 18
    e_sum = one_pe.e_dram + one_pe.e_l2 + one_pe.e_l1
    assert lb.energy_total == pytest.approx((8 + 6 + 3) * e_sum + one_pe.e_mac * 18)
    assert lb.utilization == 1.0


def test_objective_examples():
    cv = evaluate(UNIT, Problem("conv1d", (8, 2)), _untiled(Problem("conv1d", (8, 2)), UNIT))
    assert objective_value(cv) == cv.energy_total * cv.cycles / cv.clock_hz == cv.edp
    k = n_components("conv1d")
    assert objective_value(cv, Objective((0.0,) * k)) == 0.0
    onehot = tuple(1.0 if name == "cycles" else 0.0 for name in component_names("conv1d"))
    assert objective_value(cv, Objective(onehot)) == cv.cycles
    with pytest.raises(ValueError):
        objective_value(cv, Objective((1.0,) * (k - 1)))
    with pytest.raises(ValueError):
        Objective((-1.0,) * k)
    assert objective_value(cv, EDP) == cv.edp


def test_cost_vector_round_trip():
    cv = evaluate(DESK, Problem("mttkrp", (4, 4, 2, 2)), get_mapping(ctx_of("mttkrp", (4, 4, 2, 2)), 1))
    back = CostVector.from_vector(cv.as_vector(), 4, cv.clock_hz)
    assert np.array_equal(back.as_vector(), cv.as_vector())
    macs = required_flops(Problem("mttkrp", (4, 4, 2, 2)))
    assert cv.energy_total == pytest.approx(cv.energy.sum() + DESK.e_mac * macs)


def _problem_strategy(max_macs):
    @st.composite
    def draw(data):
        kind = data(st.sampled_from(list(AlgorithmKind)))
        dims = [data(st.integers(1, 8)) for _ in DIMS[kind]]
        names = DIMS[kind]
        if kind is not AlgorithmKind.MTTKRP:
            w, r = names.index("W"), names.index("R")
            dims[w] = max(dims[w], dims[r])
            if kind is AlgorithmKind.CONV_LAYER:
                h, s = names.index("H"), names.index("S")
                dims[h] = max(dims[h], dims[s])
        p = Problem(kind, tuple(dims))
        assume(required_flops(p) <= max_macs)
        return p
    return draw()


@settings(max_examples=60, deadline=None)
@given(_problem_strategy(4000), st.integers(0, 2**31), st.sampled_from([UNIT, TINY, DESK]))
def test_counts_equal_interpreter(p, seed, accel):
    ctx = ctx_of(p.kind, p.dims, accel)
    try:
        m = get_mapping(ctx, seed)
    except ValueError:
        assume(False)
    assert np.array_equal(access_counts(ctx, m), simulate(accel, p, m).counts)


def _dominates(ctx, mappings):
    lb = algorithmic_minimum(ctx.accel, ctx.problem)
    n = 0
    for m in mappings:
        cv = evaluate_ctx(ctx, m, check=False)
        assert cv.energy_total >= lb.energy_total * (1 - 1e-12)
        assert cv.cycles >= lb.cycles
        n += 1
    return n


@pytest.mark.parametrize("kind,dims,acc", [
    ("conv1d", (8, 3), SMALL),
    ("conv1d", (6, 2), TINY),
    ("conv1d", (12, 4), TINY),
    ("mttkrp", (2, 1, 1, 1), TINY),
])
def test_dominance_exhaustive(kind, dims, acc):
    ctx = ctx_of(kind, dims, acc)
    assert _dominates(ctx, enumerate_space(ctx)) > 0


def test_dominance_fuzzed():
    rng = np.random.default_rng(8)
    n = 0
    for kind, dims in (("convlayer", (2, 8, 8, 6, 6, 3, 3)), ("mttkrp", (8, 8, 4, 4)), ("conv1d", (40, 5))):
        ctx = ctx_of(kind, dims, DESK)
        n += _dominates(ctx, sample_mappings(ctx, rng, 3400))
    assert n >= 10_000


def _move_factor(m: Mapping, d: int, src: int, dst: int, accel) -> Mapping | None:
    ch = m.chains.copy()
    f = int(ch[d, src])
    if f == 1:
        return None
    q = next(k for k in range(2, f + 1) if f % k == 0)
    ch[d, src] //= q
    ch[d, dst] *= q
    return Mapping.from_chains(ch, m.order, m.banks(accel), accel)


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([("conv1d", (24, 4)), ("mttkrp", (6, 4, 4, 6)), ("convlayer", (2, 6, 4, 6, 6, 3, 3))]),
       st.integers(0, 2**31), st.data())
def test_shrinking_a_tile_never_cuts_traffic_above_it(case, seed, data):
    kind, dims = case
    ctx = ctx_of(kind, dims, DESK)
    m = get_mapping(ctx, seed)
    d = data.draw(st.integers(0, ctx.n_dims - 1))
    base = access_counts(ctx, m)
    smaller_l1 = _move_factor(m, d, 2, 1, DESK)  # L1 tile shrinks, L2 tile unchanged
    if smaller_l1 is not None:
        c = access_counts(ctx, smaller_l1)
        assert np.array_equal(c[0], base[0])
        assert np.all(c[1] >= base[1])
    smaller_l2 = _move_factor(m, d, 1, 0, DESK)  # L2 tile shrinks
    if smaller_l2 is not None:
        assert np.all(access_counts(ctx, smaller_l2)[0] >= base[0])
