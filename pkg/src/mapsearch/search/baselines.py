"""Black-box baselines that query the true cost model once per iteration."""
from __future__ import annotations

from dataclasses import dataclass
from math import log

import numpy as np

from ..costmodel import EDP, Objective
from ..mapspace import MapSpaceCtx, encode, get_mapping, get_projection, sample_mappings, space_size
from .base import (
    SearchBudget,
    SearchTrace,
    TraceStep,
    TrueObjective,
    _Clock,
    accept,
    attribute_groups,
    crossover_groups,
    neighbor,
    resample_group,
)


class _Recorder:
    """Appends one trace step per true evaluation and tracks the strict best."""

    def __init__(self, trace: SearchTrace, clock: _Clock, obj: TrueObjective):
        self.trace, self.clock, self.obj = trace, clock, obj
        self.best = np.inf

    def eval(self, m) -> float:
        val = self.obj(m)
        if val < self.best:
            self.best = val
            self.trace.best_mapping = m
        self.trace.steps.append(TraceStep(self.clock.t, m, self.clock.stamp(), None, val, self.best))
        self.clock.t += 1
        return val

    def finish(self) -> SearchTrace:
        self.trace.best_true_obj_final = self.best
        self.trace.n_true_evals = self.obj.calls
        return self.trace


# ---- random search ----------------------------------------------------------------


def random_search(ctx: MapSpaceCtx, budget: SearchBudget, seed: int = 0, obj: Objective = EDP) -> SearchTrace:
    rng = np.random.default_rng(seed)
    clock = _Clock(budget)
    rec = _Recorder(SearchTrace("random", seed), clock, TrueObjective(ctx, obj))
    while clock.running():
        rec.eval(get_mapping(ctx, rng))
    return rec.finish()


# ---- simulated annealing ------------------------------------------------------------


@dataclass(frozen=True)
class SaConfig:
    """``T0=None`` auto-tunes the start temperature from ``tune_moves`` random
    neighbor moves so that about ``tune_acceptance`` of uphill moves pass.
    ``cooling=None`` decays to ``final_ratio * T0`` by the end of an
    iteration budget (0.999 per step for wall budgets)."""

    T0: float | None = None
    cooling: float | None = None
    final_ratio: float = 1e-3
    tune_moves: int = 50
    tune_acceptance: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.T0 is not None and not self.T0 > 0:
            raise ValueError("T0 must be positive")
        if self.cooling is not None and not 0 < self.cooling <= 1:
            raise ValueError("cooling must be in (0, 1]")
        if not 0 < self.tune_acceptance < 1:
            raise ValueError("tune acceptance must be in (0, 1)")
        if not 0 < self.final_ratio <= 1:
            raise ValueError("final ratio must be in (0, 1]")


def simulated_annealing(ctx: MapSpaceCtx, cfg: SaConfig = SaConfig(), budget: SearchBudget = SearchBudget(1000),
                        obj: Objective = EDP) -> SearchTrace:
    rng = np.random.default_rng(cfg.seed)
    clock = _Clock(budget)
    rec = _Recorder(SearchTrace("sa", cfg.seed), clock, TrueObjective(ctx, obj))
    groups = attribute_groups(ctx)

    m = get_mapping(ctx, rng)
    cost = rec.eval(m)
    T = cfg.T0
    if T is None:
        # pre-pass: an unconditional random walk, every step charged to the budget
        uphill = []
        for _ in range(cfg.tune_moves):
            if not clock.running():
                break
            cand = neighbor(ctx, m, rng, groups)
            c = rec.eval(cand)
            if c > cost:
                uphill.append(c - cost)
            m, cost = cand, c
        T = -float(np.mean(uphill)) / log(cfg.tune_acceptance) if uphill else 1.0
    T0 = T
    cooling = cfg.cooling
    if cooling is None:
        if budget.max_iterations is not None:
            steps = max(budget.max_iterations - clock.t, 1)
            cooling = cfg.final_ratio ** (1.0 / steps)
        else:
            cooling = 0.999

    accepted = proposed = 0
    while clock.running():
        cand = neighbor(ctx, m, rng, groups)
        c = rec.eval(cand)
        proposed += 1
        if accept(c, cost, max(T, 1e-300), rng):
            m, cost = cand, c
            accepted += 1
        T *= cooling
    rec.trace.extra.update(T0=T0, cooling=cooling, acceptance_rate=accepted / max(proposed, 1))
    return rec.finish()


# ---- genetic search -----------------------------------------------------------------


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    crossover: float = 0.75
    mutation: float = 0.05
    tournament: int = 3
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not (0 <= self.crossover <= 1 and 0 <= self.mutation <= 1):
            raise ValueError("probabilities must be in [0, 1]")
        if self.tournament < 1 or self.elitism < 0:
            raise ValueError("tournament size must be >= 1 and elitism >= 0")


def genetic_search(ctx: MapSpaceCtx, cfg: GaConfig = GaConfig(), budget: SearchBudget = SearchBudget(1000),
                   obj: Objective = EDP) -> SearchTrace:
    """Generational GA: tournament selection, uniform attribute-group crossover
    on pairs, per-group resampling mutation, projection of every child."""
    rng = np.random.default_rng(cfg.seed)
    clock = _Clock(budget)
    rec = _Recorder(SearchTrace("ga", cfg.seed), clock, TrueObjective(ctx, obj))
    pop_size = cfg.population
    size = space_size(ctx)
    if size.exact and size.count < pop_size:
        pop_size = max(int(size.count), 1)
    mgroups = attribute_groups(ctx)
    xgroups = crossover_groups(ctx)

    pop, fit = [], []
    for m in sample_mappings(ctx, rng, pop_size):
        if not clock.running():
            break
        pop.append(m)
        fit.append(rec.eval(m))
    n_elite = min(cfg.elitism, len(pop))
    generations = 0

    def pick() -> int:
        idx = rng.integers(len(pop), size=min(cfg.tournament, len(pop)))
        return int(min(idx, key=lambda i: (fit[i], i)))

    while clock.running() and len(pop) == pop_size and n_elite < pop_size:
        order = sorted(range(pop_size), key=lambda i: (fit[i], i))
        new_pop = [pop[i] for i in order[:n_elite]]
        new_fit = [fit[i] for i in order[:n_elite]]
        while len(new_pop) < pop_size and clock.running():
            a, b = encode(ctx, pop[pick()]), encode(ctx, pop[pick()])
            if rng.random() < cfg.crossover:
                for g in xgroups:
                    if rng.random() < 0.5:
                        a[g], b[g] = b[g].copy(), a[g].copy()
            for child in (a, b):
                if len(new_pop) >= pop_size or not clock.running():
                    break
                for g in mgroups:
                    if rng.random() < cfg.mutation:
                        child = resample_group(ctx, child, g, rng)
                m = get_projection(ctx, child)
                new_pop.append(m)
                new_fit.append(rec.eval(m))
        if len(new_pop) < pop_size:
            break
        pop, fit = new_pop, new_fit
        generations += 1
    rec.trace.extra.update(generations=generations, population=list(pop), fitness=list(fit))
    return rec.finish()
