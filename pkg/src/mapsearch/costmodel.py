"""Analytical access-count cost model and the algorithmic lower bound.

Loops of the three levels are concatenated outermost-first (DRAM loops, then
L2 loops, then the per-PE L1 loops).  The tile held just below a boundary is
refetched whenever its coordinate along a relevant dimension changes, so the
number of fills across a boundary is the product of the trip counts of every
loop up to and including the innermost *relevant* loop above that boundary.
Loops with a single trip never change anything and are ignored.  Trailing
irrelevant loops therefore reuse the resident tile (stationarity), while a
relevant loop outside an irrelevant one forces refetch through the irrelevant
loop's trips.

Words moved out of a level are charged at that level's energy per word:
DRAM->L2 fills move the L2 tile; L2->L1 fills move each PE's shard of the L1
tile (counted per PE); L1->PE reads move one word per operand per change.
Cycles are compute bound.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import prod

import numpy as np

from .accel import LEVELS, AcceleratorConfig
from .mapspace import Mapping, MapSpaceCtx, is_member
from .workload import TENSOR_AXES, AlgorithmKind, Problem, required_flops, tensor_footprint


class InvalidMappingError(ValueError):
    pass


def component_names(kind: AlgorithmKind) -> tuple[str, ...]:
    ts = tuple(TENSOR_AXES[AlgorithmKind.parse(kind)])
    return tuple(f"energy_{lvl}_{t}" for lvl in LEVELS for t in ts) + (
        "energy_total",
        "cycles",
        "utilization",
    )


@dataclass(frozen=True)
class CostVector:
    energy: np.ndarray  # (3, T) pJ, rows DRAM, L2, L1
    energy_total: float
    cycles: int
    utilization: float
    clock_hz: float

    @property
    def delay(self) -> float:
        return self.cycles / self.clock_hz

    @property
    def edp(self) -> float:
        """Energy-delay product in pJ*s."""
        return self.energy_total * self.delay

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.asarray(self.energy, float).reshape(-1), [self.energy_total, self.cycles, self.utilization]]
        )

    @classmethod
    def from_vector(cls, v, n_tensors: int, clock_hz: float) -> "CostVector":
        v = np.asarray(v, dtype=float)
        k = 3 * n_tensors
        if v.shape != (k + 3,):
            raise ValueError(f"cost vector must have {k + 3} entries")
        return cls(
            energy=v[:k].reshape(3, n_tensors),
            energy_total=float(v[k]),
            cycles=float(v[k + 1]),
            utilization=float(v[k + 2]),
            clock_hz=clock_hz,
        )


@dataclass(frozen=True)
class Objective:
    """``weights=None`` is the energy-delay product; otherwise a weighted sum
    over the cost-vector components in :func:`component_names` order."""

    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("objective weights must be finite and non-negative")


EDP = Objective()


def objective_value(cv: CostVector, obj: Objective = EDP) -> float:
    if obj.weights is None:
        return cv.edp
    v = cv.as_vector()
    if len(obj.weights) != v.size:
        raise ValueError(f"objective has {len(obj.weights)} weights for {v.size} components")
    return float(np.dot(obj.weights, v))


@lru_cache(maxsize=256)
def make_ctx(problem: Problem, accel: AcceleratorConfig) -> MapSpaceCtx:
    return MapSpaceCtx(problem, accel)


def access_counts(ctx: MapSpaceCtx, m: Mapping) -> np.ndarray:
    """Words moved out of DRAM, L2 and L1 per tensor, shape (3, T)."""
    n = ctx.n_dims
    ch = m.chains
    trips = np.concatenate([ch[list(m.order[lvl]), lvl] for lvl in range(3)])
    dims = np.concatenate([np.asarray(m.order[lvl]) for lvl in range(3)])
    cum = np.cumprod(trips)
    active = trips > 1
    n_pes = int(np.prod(ch[:, 3]))
    fp_l2 = ctx.footprints(m.tiles[1])
    fp_shard = ctx.footprints(ch[:, 2])
    out = np.zeros((3, ctx.n_tensors), dtype=np.int64)
    for t in range(ctx.n_tensors):
        hits = np.flatnonzero(active & ctx.relevance[t][dims])
        for b, (limit, words) in enumerate(
            ((n, fp_l2[t]), (2 * n, fp_shard[t] * n_pes), (3 * n, n_pes))
        ):
            inner = hits[hits < limit]
            fills = int(cum[inner[-1]]) if inner.size else 1
            out[b, t] = fills * int(words)
    return out


def evaluate_ctx(ctx: MapSpaceCtx, m: Mapping, check: bool = True) -> CostVector:
    if check and not is_member(ctx, m):
        raise InvalidMappingError(f"mapping is not a member of the map space of {ctx.problem}")
    acc = ctx.accel
    counts = access_counts(ctx, m)
    e_word = np.array([acc.energy_per_word(l) for l in LEVELS])[:, None]
    energy = counts * e_word
    flops = required_flops(ctx.problem)
    active_pes = prod(m.par)
    cycles = -(-flops // (acc.flops_per_pe * active_pes))
    return CostVector(
        energy=energy,
        energy_total=float(energy.sum() + acc.e_mac * flops),
        cycles=int(cycles),
        utilization=active_pes / acc.num_pes,
        clock_hz=acc.clock_hz,
    )


def evaluate(accel: AcceleratorConfig, p: Problem, m: Mapping, check: bool = True) -> CostVector:
    """Cost of running ``p`` under mapping ``m``; raises for invalid mappings."""
    return evaluate_ctx(make_ctx(p, accel), m, check=check)


def algorithmic_minimum(accel: AcceleratorConfig, p: Problem) -> CostVector:
    """Every word crosses every level once and all PEs stay busy.

    The energy and cycle bounds are each unachievable in general, and their
    product even more so; it is a normalizer, not a target.
    """
    ts = tuple(TENSOR_AXES[p.kind])
    fps = np.array([tensor_footprint(p, t) for t in ts], dtype=float)
    energy = np.stack([fps * accel.energy_per_word(l) for l in LEVELS])
    flops = required_flops(p)
    return CostVector(
        energy=energy,
        energy_total=float(energy.sum() + accel.e_mac * flops),
        cycles=int(-(-flops // (accel.flops_per_pe * accel.num_pes))),
        utilization=1.0,
        clock_hz=accel.clock_hz,
    )


def n_components(kind: AlgorithmKind) -> int:
    return 3 * len(TENSOR_AXES[AlgorithmKind.parse(kind)]) + 3


__all__ = [
    "CostVector",
    "EDP",
    "InvalidMappingError",
    "Objective",
    "access_counts",
    "algorithmic_minimum",
    "component_names",
    "evaluate",
    "evaluate_ctx",
    "make_ctx",
    "n_components",
    "objective_value",
]
