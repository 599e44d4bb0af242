import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapsearch.workload import (
    DIMS,
    TARGET_PROBLEMS,
    AlgorithmKind,
    Problem,
    golden_execute,
    random_inputs,
    required_flops,
    tensor_footprint,
)


def test_dim_and_tensor_counts():
    assert DIMS[AlgorithmKind.CONV1D] == ("W", "R")
    assert DIMS[AlgorithmKind.CONV_LAYER] == ("N", "K", "C", "H", "W", "R", "S")
    assert DIMS[AlgorithmKind.MTTKRP] == ("I", "J", "K", "L")
    counts = {k: len(Problem(k, (1,) * len(DIMS[k])).tensors) for k in AlgorithmKind}
    assert counts == {AlgorithmKind.CONV1D: 3, AlgorithmKind.CONV_LAYER: 3, AlgorithmKind.MTTKRP: 4}


def test_problem_validation():
    with pytest.raises(ValueError):
        Problem("conv1d", (3, 4))  # R > W
    with pytest.raises(ValueError):
        Problem("convlayer", (1, 1, 1, 2, 5, 1, 3))  # S > H
    with pytest.raises(ValueError):
        Problem("mttkrp", (1, 2, 3))
    with pytest.raises(ValueError):
        Problem("mttkrp", (1, 0, 3, 4))
    with pytest.raises(ValueError):
        AlgorithmKind.parse("gemm")


def test_required_flops_examples():
    assert required_flops(Problem("conv1d", (8, 3))) == 18
    assert required_flops(Problem("mttkrp", (2, 3, 4, 5))) == 120
    assert required_flops(TARGET_PROBLEMS["resnet_conv3"]) == 16 * 128 * 128 * 26 * 26 * 9


def test_target_table():
    # N, K, C, H=W, R=S per row of the target-problem table
    rows = {
        "resnet_conv3": (16, 128, 128, 28, 3),
        "resnet_conv4": (16, 256, 256, 14, 3),
        "inception_conv2": (32, 192, 192, 56, 3),
        "vgg_conv2": (16, 128, 64, 112, 3),
        "alexnet_conv2": (8, 256, 96, 27, 5),
        "alexnet_conv4": (8, 384, 384, 13, 3),
    }
    for name, (n, k, c, hw, rs) in rows.items():
        assert TARGET_PROBLEMS[name].dims == (n, k, c, hw, hw, rs, rs)
    assert TARGET_PROBLEMS["mttkrp_0"].dims == (128, 1024, 4096, 2048)
    assert TARGET_PROBLEMS["mttkrp_1"].dims == (2048, 4096, 1024, 128)


def test_tensor_footprint_examples():
    p = Problem("conv1d", (8, 3))
    assert tensor_footprint(p, "I") == 8
    assert tensor_footprint(p, "O") == 6
    assert tensor_footprint(p, "F") == 3
    assert tensor_footprint(Problem("mttkrp", (2, 3, 4, 5)), "A") == 40
    with pytest.raises(KeyError):
        tensor_footprint(p, "A")


def test_golden_examples():
    p = Problem("conv1d", (3, 1))
    out = golden_execute(p, {"I": np.array([1, 2, 3]), "F": np.array([2])})
    assert out.tolist() == [2, 4, 6]
    p = Problem("conv1d", (4, 2))
    out = golden_execute(p, {"I": np.ones(4, dtype=int), "F": np.ones(2, dtype=int)})
    assert out.tolist() == [2, 2, 2]
    with pytest.raises(ValueError):
        golden_execute(p, {"I": np.ones(5), "F": np.ones(2)})


def test_golden_mttkrp_matches_einsum(rng):
    p = Problem("mttkrp", (2, 3, 4, 5))
    ins = random_inputs(p, rng)
    assert np.array_equal(golden_execute(p, ins), np.einsum("ikl,kj,lj->ij", ins["A"], ins["B"], ins["C"]))


def test_golden_convlayer_matches_sliding_windows(rng):
    p = Problem("convlayer", (2, 3, 2, 5, 6, 2, 3))
    ins = random_inputs(p, rng)
    I, F = ins["I"], ins["F"]  # I[n, c, h, w], F[k, c, r, s]
    N, K, C, H, W, R, S = p.dims
    ref = np.zeros((N, K, H - S + 1, W - R + 1), dtype=I.dtype)
    for r in range(R):
        for s in range(S):
            win = I[:, :, s : s + H - S + 1, r : r + W - R + 1]
            ref += np.einsum("nchw,kc->nkhw", win, F[:, :, r, s])
    assert np.array_equal(golden_execute(p, ins), ref)


def _small_problems(kind, cap):
    for dims in itertools.product(range(1, cap + 1), repeat=len(DIMS[kind])):
        try:
            yield Problem(kind, dims)
        except ValueError:
            continue


@pytest.mark.parametrize("kind", ["conv1d", "mttkrp"])
def test_flops_equal_mac_count_exhaustive(kind):
    for p in _small_problems(kind, 6):
        ins = {t: np.zeros(p.tensor_shape(t), dtype=np.int64) for t in p.tensors if t != "O"}
        _, macs = golden_execute(p, ins, count=True)
        assert macs == required_flops(p), p


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=7, max_size=7))
def test_flops_equal_mac_count_convlayer(dims):
    n, k, c, h, w, r, s = dims
    p = Problem("convlayer", (n, k, c, max(h, s), max(w, r), r, s))
    ins = {t: np.zeros(p.tensor_shape(t), dtype=np.int64) for t in p.tensors if t != "O"}
    _, macs = golden_execute(p, ins, count=True)
    assert macs == required_flops(p)


def _touched(p: Problem) -> dict[str, set]:
    """Distinct word addresses per tensor, found by walking the iteration space."""
    names = p.dim_names
    seen = {t: set() for t in p.tensors}
    for point in itertools.product(*[range(b) for b in p.loop_bounds]):
        v = dict(zip(names, point))
        if p.kind is AlgorithmKind.CONV1D:
            seen["I"].add((v["W"] + v["R"],))
            seen["O"].add((v["W"],))
            seen["F"].add((v["R"],))
        elif p.kind is AlgorithmKind.CONV_LAYER:
            seen["I"].add((v["N"], v["C"], v["H"] + v["S"], v["W"] + v["R"]))
            seen["O"].add((v["N"], v["K"], v["H"], v["W"]))
            seen["F"].add((v["K"], v["C"], v["R"], v["S"]))
        else:
            seen["A"].add((v["I"], v["K"], v["L"]))
            seen["B"].add((v["K"], v["J"]))
            seen["C"].add((v["L"], v["J"]))
            seen["O"].add((v["I"], v["J"]))
    return seen


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(AlgorithmKind)), st.data())
def test_footprints_equal_distinct_words_touched(kind, data):
    dims = [data.draw(st.integers(1, 4)) for _ in DIMS[kind]]
    if kind is not AlgorithmKind.MTTKRP:
        names = DIMS[kind]
        dims[names.index("W")] = max(dims[names.index("W")], dims[names.index("R")])
        if kind is AlgorithmKind.CONV_LAYER:
            dims[names.index("H")] = max(dims[names.index("H")], dims[names.index("S")])
    p = Problem(kind, tuple(dims))
    seen = _touched(p)
    for t in p.tensors:
        assert tensor_footprint(p, t) == len(seen[t])
