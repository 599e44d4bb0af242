"""Target kernels, their problem shapes, and a naive reference executor.

Every kernel is described by its loop dimensions and, for each tensor, a list
of axes.  An axis is the tuple of loop dimensions whose indices are summed to
address it (``("W", "R")`` for the sliding input window of a convolution).
The same description drives footprint accounting here and the tiled
interpreter in :mod:`mapsearch.interpreter`.

Convolution width/height loops run over *output* positions, so the ``W`` loop
of Conv1D has ``W - R + 1`` iterations (stride is always 1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from math import prod

import numpy as np


class AlgorithmKind(str, enum.Enum):
    CONV1D = "conv1d"
    CONV_LAYER = "convlayer"
    MTTKRP = "mttkrp"

    @classmethod
    def parse(cls, s: "str | AlgorithmKind") -> "AlgorithmKind":
        if isinstance(s, cls):
            return s
        key = str(s).strip().lower().replace("_", "").replace("-", "")
        for k in cls:
            if k.value == key:
                return k
        raise ValueError(f"unknown algorithm kind {s!r}")


DIMS: dict[AlgorithmKind, tuple[str, ...]] = {
    AlgorithmKind.CONV1D: ("W", "R"),
    AlgorithmKind.CONV_LAYER: ("N", "K", "C", "H", "W", "R", "S"),
    AlgorithmKind.MTTKRP: ("I", "J", "K", "L"),
}

# tensor -> axes; each axis lists the loop dims whose indices add up to address it
TENSOR_AXES: dict[AlgorithmKind, dict[str, tuple[tuple[str, ...], ...]]] = {
    AlgorithmKind.CONV1D: {
        "I": (("W", "R"),),
        "O": (("W",),),
        "F": (("R",),),
    },
    AlgorithmKind.CONV_LAYER: {
        "I": (("N",), ("C",), ("H", "S"), ("W", "R")),
        "O": (("N",), ("K",), ("H",), ("W",)),
        "F": (("K",), ("C",), ("R",), ("S",)),
    },
    AlgorithmKind.MTTKRP: {
        "A": (("I",), ("K",), ("L",)),
        "B": (("K",), ("J",)),
        "C": (("L",), ("J",)),
        "O": (("I",), ("J",)),
    },
}

OUTPUT_TENSOR = "O"


def tensors(kind: AlgorithmKind) -> tuple[str, ...]:
    return tuple(TENSOR_AXES[kind])


def relevant_dims(kind: AlgorithmKind, tensor: str) -> frozenset[str]:
    return frozenset(d for axis in TENSOR_AXES[kind][tensor] for d in axis)


@dataclass(frozen=True)
class Problem:
    """A kernel plus its dimension tuple; the tuple doubles as the problem id."""

    kind: AlgorithmKind
    dims: tuple[int, ...]

    def __post_init__(self):
        kind = AlgorithmKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        names = DIMS[kind]
        if len(dims) != len(names):
            raise ValueError(f"{kind.value} takes {len(names)} dims {names}, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        v = dict(zip(names, dims))
        if kind is not AlgorithmKind.MTTKRP:
            if v["R"] > v["W"]:
                raise ValueError("filter width R must not exceed W")
            if kind is AlgorithmKind.CONV_LAYER and v["S"] > v["H"]:
                raise ValueError("filter height S must not exceed H")

    @property
    def dim_names(self) -> tuple[str, ...]:
        return DIMS[self.kind]

    @property
    def named(self) -> dict[str, int]:
        return dict(zip(self.dim_names, self.dims))

    @property
    def p_id(self) -> tuple[int, ...]:
        return self.dims

    @property
    def loop_bounds(self) -> tuple[int, ...]:
        """Iteration count of each loop dimension (output extent for W/H)."""
        v = self.named
        out = dict(v)
        if self.kind is not AlgorithmKind.MTTKRP:
            out["W"] = v["W"] - v["R"] + 1
            if self.kind is AlgorithmKind.CONV_LAYER:
                out["H"] = v["H"] - v["S"] + 1
        return tuple(out[n] for n in self.dim_names)

    @property
    def tensors(self) -> tuple[str, ...]:
        return tensors(self.kind)

    def tensor_shape(self, t: str) -> tuple[int, ...]:
        return tile_shape(self.kind, t, self.loop_bounds)

    def __str__(self) -> str:
        return f"{self.kind.value}(" + ",".join(f"{n}={d}" for n, d in self.named.items()) + ")"


def tile_shape(kind: AlgorithmKind, t: str, extents) -> tuple[int, ...]:
    """Shape of the region of tensor ``t`` touched by a tile of loop ``extents``."""
    try:
        axes = TENSOR_AXES[kind][t]
    except KeyError:
        raise KeyError(f"tensor {t!r} is not an operand of {kind.value}") from None
    idx = {n: i for i, n in enumerate(DIMS[kind])}
    return tuple(sum(extents[idx[d]] for d in axis) - len(axis) + 1 for axis in axes)


def tile_footprint(kind: AlgorithmKind, t: str, extents) -> int:
    return prod(tile_shape(kind, t, extents))


def required_flops(p: Problem) -> int:
    """MAC count of the kernel: product of all loop bounds."""
    return prod(p.loop_bounds)


def tensor_footprint(p: Problem, t: str) -> int:
    """Words in the full (untiled) tensor ``t``."""
    return tile_footprint(p.kind, t, p.loop_bounds)


def random_inputs(p: Problem, rng: np.random.Generator, low: int = -4, high: int = 5) -> dict[str, np.ndarray]:
    """Small integer operands, so tiled and untiled results compare exactly."""
    return {
        t: rng.integers(low, high, size=p.tensor_shape(t), dtype=np.int64)
        for t in p.tensors
        if t != OUTPUT_TENSOR
    }


def _check_shapes(p: Problem, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for t in p.tensors:
        if t == OUTPUT_TENSOR:
            continue
        if t not in inputs:
            raise ValueError(f"missing input tensor {t}")
        a = np.asarray(inputs[t])
        if a.shape != p.tensor_shape(t):
            raise ValueError(f"tensor {t} has shape {a.shape}, expected {p.tensor_shape(t)}")
        out[t] = a
    return out


def golden_execute(p: Problem, inputs: dict[str, np.ndarray], *, count: bool = False):
    """Untiled reference evaluation written directly from each kernel equation.

    Returns the output tensor, or ``(output, macs)`` when ``count`` is set.
    """
    ins = _check_shapes(p, inputs)
    dtype = np.result_type(*ins.values())
    v = p.named
    macs = 0
    if p.kind is AlgorithmKind.CONV1D:
        I, F = ins["I"], ins["F"]
        X = v["W"] - v["R"] + 1
        O = np.zeros(X, dtype=dtype)
        for x in range(X):
            for r in range(v["R"]):
                O[x] += I[x + r] * F[r]
                macs += 1
    elif p.kind is AlgorithmKind.CONV_LAYER:
        I, F = ins["I"], ins["F"]
        N, K, C, R, S = v["N"], v["K"], v["C"], v["R"], v["S"]
        X, Y = v["W"] - R + 1, v["H"] - S + 1
        O = np.zeros((N, K, Y, X), dtype=dtype)
        for n in range(N):
            for k in range(K):
                for y in range(Y):
                    for x in range(X):
                        acc = O[n, k, y, x]
                        for c in range(C):
                            for s in range(S):
                                for r in range(R):
                                    acc += F[k, c, r, s] * I[n, c, y + s, x + r]
                                    macs += 1
                        O[n, k, y, x] = acc
    else:
        A, B, Cm = ins["A"], ins["B"], ins["C"]
        I_, J, K, L = v["I"], v["J"], v["K"], v["L"]
        O = np.zeros((I_, J), dtype=dtype)
        for i in range(I_):
            for j in range(J):
                acc = O[i, j]
                for k in range(K):
                    for l in range(L):
                        acc += A[i, k, l] * B[k, j] * Cm[l, j]
                        macs += 1
                O[i, j] = acc
    return (O, macs) if count else O


# Target problems from the evaluation table; convolution rows use H = W.
TARGET_PROBLEMS: dict[str, Problem] = {
    "resnet_conv3": Problem(AlgorithmKind.CONV_LAYER, (16, 128, 128, 28, 28, 3, 3)),
    "resnet_conv4": Problem(AlgorithmKind.CONV_LAYER, (16, 256, 256, 14, 14, 3, 3)),
    "inception_conv2": Problem(AlgorithmKind.CONV_LAYER, (32, 192, 192, 56, 56, 3, 3)),
    "vgg_conv2": Problem(AlgorithmKind.CONV_LAYER, (16, 128, 64, 112, 112, 3, 3)),
    "alexnet_conv2": Problem(AlgorithmKind.CONV_LAYER, (8, 256, 96, 27, 27, 5, 5)),
    "alexnet_conv4": Problem(AlgorithmKind.CONV_LAYER, (8, 384, 384, 13, 13, 3, 3)),
    "mttkrp_0": Problem(AlgorithmKind.MTTKRP, (128, 1024, 4096, 2048)),
    "mttkrp_1": Problem(AlgorithmKind.MTTKRP, (2048, 4096, 1024, 128)),
}
