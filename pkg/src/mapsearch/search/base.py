"""Budgets, traces and the attribute-group moves shared by the searchers."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import costmodel
from ..costmodel import EDP, Objective, algorithmic_minimum, objective_value
from ..mapspace import Mapping, MapSpaceCtx, divisors, encode, get_projection, write_mappings

TRACE_COLUMNS = (
    "run_seed",
    "method",
    "iteration",
    "elapsed_ns",
    "predicted_obj",
    "true_obj_if_known",
    "best_true_obj_final",
)


@dataclass(frozen=True)
class SearchBudget:
    """Exactly one of ``max_iterations`` / ``max_wall_seconds``.

    Wall-clock stamps are only written to traces when ``record_time`` is set
    (always, for wall budgets), so iteration-budget traces stay reproducible
    byte for byte.
    """

    max_iterations: int | None = None
    max_wall_seconds: float | None = None
    record_time: bool = False

    def __post_init__(self):
        if (self.max_iterations is None) == (self.max_wall_seconds is None):
            raise ValueError("set exactly one of max_iterations and max_wall_seconds")
        bound = self.max_iterations if self.max_iterations is not None else self.max_wall_seconds
        if not bound > 0:
            raise ValueError("search budget must be positive")
        if self.max_wall_seconds is not None:
            object.__setattr__(self, "record_time", True)


class _Clock:
    def __init__(self, budget: SearchBudget):
        self.budget = budget
        self.start = time.perf_counter_ns()
        self.t = 0

    def running(self) -> bool:
        b = self.budget
        if b.max_iterations is not None:
            return self.t < b.max_iterations
        return time.perf_counter_ns() - self.start < b.max_wall_seconds * 1e9

    def stamp(self) -> int | None:
        return time.perf_counter_ns() - self.start if self.budget.record_time else None


@dataclass
class TraceStep:
    iteration: int  # also the candidate id
    mapping: Mapping
    elapsed_ns: int | None
    predicted_obj: float | None
    true_obj: float | None
    best_obj: float  # best so far under the searcher's own ranking objective


@dataclass
class SearchTrace:
    method: str
    run_seed: int
    steps: list[TraceStep] = field(default_factory=list)
    best_mapping: Mapping | None = None
    best_true_obj_final: float | None = None
    n_true_evals: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def best_curve(self) -> np.ndarray:
        return np.array([s.best_obj for s in self.steps])

    def to_rows(self) -> list[list[str]]:
        def fmt(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

        return [
            [
                str(self.run_seed),
                self.method,
                str(s.iteration),
                fmt(s.elapsed_ns),
                fmt(s.predicted_obj),
                fmt(s.true_obj),
                fmt(self.best_true_obj_final),
            ]
            for s in self.steps
        ]


def traces_to_csv(traces, header_lines=()) -> str:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        w.writerows(tr.to_rows())
    return buf.getvalue()


def write_traces(path, traces, ctx: MapSpaceCtx, header_lines=()) -> Path:
    """Trace CSV at ``path`` plus every candidate mapping in ``<path>.mappings``;
    record id ``k`` is the ``k``-th data row of the CSV, so curves can be
    re-evaluated later."""
    path = Path(path)
    path.write_text(traces_to_csv(traces, header_lines))
    mpath = path.with_name(path.name + ".mappings")
    write_mappings(mpath, ctx, [s.mapping for tr in traces for s in tr.steps])
    return mpath


# ---- true objective -------------------------------------------------------------


class TrueObjective:
    """Objective value of a mapping divided by the same objective at the
    algorithmic minimum; counts every cost-model call."""

    def __init__(self, ctx: MapSpaceCtx, obj: Objective = EDP):
        self.ctx = ctx
        self.obj = obj
        self.scale = objective_value(algorithmic_minimum(ctx.accel, ctx.problem), obj)
        if obj.weights is not None and self.scale == 0:
            self.scale = 1.0
        self.calls = 0

    def __call__(self, m: Mapping) -> float:
        self.calls += 1
        return objective_value(costmodel.evaluate_ctx(self.ctx, m), self.obj) / self.scale


# ---- attribute groups ------------------------------------------------------------
# A group is one independently resampled attribute: ("tile", d) the factor chain
# of dim d, ("par", d) its parallel degree, ("order", level), ("alloc", level, t).


def attribute_groups(ctx: MapSpaceCtx) -> list[tuple]:
    n, T = ctx.n_dims, ctx.n_tensors
    return (
        [("tile", d) for d in range(n)]
        + [("par", d) for d in range(n)]
        + [("order", lvl) for lvl in range(3)]
        + [("alloc", lvl, t) for lvl in range(2) for t in range(T)]
    )


def crossover_groups(ctx: MapSpaceCtx) -> list[np.ndarray]:
    """Flat-vector coordinate sets exchanged together by crossover."""
    s, n, T = ctx.schema, ctx.n_dims, ctx.n_tensors
    r0, p0, o0, a0 = s["ratio"].start, s["par"].start, s["order"].start, s["alloc"].start
    out = [np.array([r0 + d, r0 + n + d, r0 + 2 * n + d, p0 + d]) for d in range(n)]
    out += [np.arange(o0 + lvl * n, o0 + (lvl + 1) * n) for lvl in range(3)]
    out += [np.array([a0 + lvl * T + t]) for lvl in range(2) for t in range(T)]
    return out


def resample_group(ctx: MapSpaceCtx, v: np.ndarray, group: tuple, rng: np.random.Generator,
                   swap_order: bool = True) -> np.ndarray:
    """Copy of raw vector ``v`` with one attribute group redrawn (unprojected)."""
    v = v.copy()
    s, n, T = ctx.schema, ctx.n_dims, ctx.n_tensors
    r0, p0, o0, a0 = s["ratio"].start, s["par"].start, s["order"].start, s["alloc"].start
    kind = group[0]
    if kind == "tile":
        d = group[1]
        chains = ctx.chains[d]
        row = chains[rng.integers(len(chains))]
        v[[r0 + d, r0 + n + d, r0 + 2 * n + d, p0 + d]] = row
    elif kind == "par":
        d = group[1]
        l1 = int(round(v[r0 + 2 * n + d] * v[p0 + d]))
        divs = divisors(max(l1, 1))
        new = divs[rng.integers(len(divs))]
        v[r0 + 2 * n + d] = max(l1, 1) // new
        v[p0 + d] = new
    elif kind == "order":
        lvl = group[1]
        seg = slice(o0 + lvl * n, o0 + (lvl + 1) * n)
        scores = v[seg].copy()
        if swap_order and n > 1:
            i, j = rng.choice(n, size=2, replace=False)
            scores[[i, j]] = scores[[j, i]]
        else:
            scores = rng.permutation(np.linspace(1.0, 0.0, n)) if n > 1 else scores
        v[seg] = scores
    elif kind == "alloc":
        lvl, t = group[1], group[2]
        nb = ctx.accel.banks(("L2", "L1")[lvl])
        v[a0 + lvl * T + t] = rng.integers(0, nb + 1) / nb
    else:
        raise ValueError(f"unknown attribute group {group!r}")
    return v


def neighbor(ctx: MapSpaceCtx, m: Mapping, rng: np.random.Generator, groups=None) -> Mapping:
    groups = groups or attribute_groups(ctx)
    g = groups[rng.integers(len(groups))]
    return get_projection(ctx, resample_group(ctx, encode(ctx, m), g, rng))


def accept(candidate_cost: float, incumbent_cost: float, T: float, rng: np.random.Generator) -> bool:
    """Metropolis rule: always take an improvement, else with probability exp(-delta/T)."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    if candidate_cost <= incumbent_cost:
        return True
    return bool(rng.random() < np.exp(-(candidate_cost - incumbent_cost) / T))
