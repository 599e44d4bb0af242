"""Experiment runner: repeated seeded runs, aggregation, and the cost-surface sweep."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from math import exp, log

import numpy as np
from scipy.stats import spearmanr

from .. import __version__
from ..costmodel import algorithmic_minimum, evaluate_ctx, make_ctx
from ..mapspace import Mapping, divisors, get_mapping, is_member
from ..search import (
    SearchTrace,
    TrueObjective,
    genetic_search,
    gradient_search,
    random_search,
    simulated_annealing,
)
from ..dataset import Dataset, bound_divisors
from ..surrogate import MlpModel, forward, predicted_edp
from ..workload import TENSOR_AXES, Problem
from .config import ExperimentConfig


class AggregationError(ValueError):
    pass


def run_seed(master: int, problem_index: int, run: int) -> int:
    """Seed shared by every method for one (problem, run) pair."""
    return int(np.random.SeedSequence([master, problem_index, run]).generate_state(1)[0])


def header_lines(cfg: ExperimentConfig, **extra) -> list[str]:
    lines = [f"tool=mapsearch {__version__}", f"config_hash={cfg.hash()}", f"master_seed={cfg.seed}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines


def run_method(cfg: ExperimentConfig, method: str, problem: Problem, seed: int,
               model: MlpModel | None = None) -> SearchTrace:
    ctx = make_ctx(problem, cfg.accel)
    if method == "mm":
        if model is None:
            raise ValueError("the mm method needs a trained surrogate")
        return gradient_search(ctx, model, _with_seed(cfg.mm, seed), cfg.budget)
    if method == "sa":
        return simulated_annealing(ctx, _with_seed(cfg.sa, seed), cfg.budget)
    if method == "ga":
        return genetic_search(ctx, _with_seed(cfg.ga, seed), cfg.budget)
    if method == "random":
        return random_search(ctx, cfg.budget, seed)
    raise ValueError(f"unknown method {method!r}")


def _with_seed(c, seed):
    return replace(c, seed=seed)


def _job(args):
    cfg, method, problem, seed, model = args
    return run_method(cfg, method, problem, seed, model)


def run_many(cfg: ExperimentConfig, method: str, problem_index: int,
             model: MlpModel | None = None) -> list[SearchTrace]:
    """All runs of one method on one problem, in run order."""
    _, problem = cfg.problems[problem_index]
    jobs = [(cfg, method, problem, run_seed(cfg.seed, problem_index, r), model) for r in range(cfg.runs)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(_job, jobs))
    return [_job(j) for j in jobs]


def heldout_spearman(model: MlpModel, ds: Dataset) -> float | None:
    """Spearman rank correlation between predicted and true EDP on the held-out split."""
    if ds.is_test.sum() < 2:
        return None
    Xte = model.norm.norm_x(ds.X[ds.is_test])
    pred, _ = predicted_edp(model, forward(model, Xte))
    raw = ds.Y[ds.is_test]
    T = len(TENSOR_AXES[ds.kind])
    div = bound_divisors(ds.kind, ds.accel, ds.pids[ds.is_test])
    return float(spearmanr(pred * div[:, 3 * T] * div[:, 3 * T + 1], raw[:, 3 * T] * raw[:, 3 * T + 1]).statistic)


# ---- aggregation ------------------------------------------------------------------


def iteration_checkpoints(budget: int) -> list[int]:
    out, c = [], 1
    while c < budget:
        out.append(c)
        c *= 2
    out.append(budget)
    return out


def time_checkpoints(t_min: float, t_max: float, count: int = 10) -> list[int]:
    t_min = max(t_min, 1.0)
    if t_max <= t_min:
        return [int(t_max)]
    return sorted({round(exp(log(t_min) + (log(t_max) - log(t_min)) * i / (count - 1))) for i in range(count)})


def true_curve(trace: SearchTrace, objective: TrueObjective, cache: dict | None = None) -> np.ndarray:
    """Best-so-far true normalized objective per iteration.

    Baselines already know the true value of each candidate; surrogate-driven
    traces are re-evaluated here, after the search has finished.
    """
    cache = {} if cache is None else cache
    vals = []
    for s in trace.steps:
        v = s.true_obj
        if v is None:
            v = cache.get(s.mapping)
            if v is None:
                v = cache[s.mapping] = objective(s.mapping)
        vals.append(v)
    return np.minimum.accumulate(np.asarray(vals, dtype=float))


@dataclass
class ReportRow:
    problem: str
    method: str
    axis: str  # "iteration" or "time_ns"
    checkpoint: int
    mean_norm_edp: float
    runs: int


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    divisors: dict[str, float]  # problem -> algorithmic-minimum EDP
    ratios: list[tuple[str, str, float, float, int]]  # a, b, arithmetic, geometric, problems

    def final(self, problem: str, method: str) -> float:
        it = [r for r in self.rows if r.problem == problem and r.method == method and r.axis == "iteration"]
        return max(it, key=lambda r: r.checkpoint).mean_norm_edp

    def to_csv(self, header=()) -> str:
        buf = io.StringIO()
        for h in header:
            buf.write(f"# {h}\n")
        for name, d in self.divisors.items():
            buf.write(f"# lower_bound_edp[{name}]={d!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["problem", "method", "axis", "checkpoint", "mean_norm_edp", "runs"])
        for r in self.rows:
            w.writerow([r.problem, r.method, r.axis, r.checkpoint, repr(r.mean_norm_edp), r.runs])
        return buf.getvalue()

    def ratios_csv(self, header=()) -> str:
        buf = io.StringIO()
        for h in header:
            buf.write(f"# {h}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method_a", "method_b", "arith_mean_ratio_b_over_a", "geo_mean_ratio_b_over_a", "problems"])
        for a, b, ar, ge, n in self.ratios:
            w.writerow([a, b, repr(ar), repr(ge), n])
        return buf.getvalue()

    def summary(self) -> str:
        methods = sorted({r.method for r in self.rows})
        problems = list(self.divisors)
        lines = ["final mean normalized EDP (lower is better)"]
        lines.append("problem".ljust(24) + "".join(m.rjust(14) for m in methods))
        for p in problems:
            row = p.ljust(24)
            for m in methods:
                try:
                    row += f"{self.final(p, m):14.4g}"
                except ValueError:
                    row += "-".rjust(14)
            lines.append(row)
        return "\n".join(lines)


def aggregate(results: dict[tuple[str, str], list[SearchTrace]], divisors: dict[str, float],
              objectives: dict[str, TrueObjective] | None = None) -> ComparisonReport:
    """Fold traces keyed by (problem, method) into mean best-so-far curves.

    Trace objectives are already normalized by the algorithmic-minimum EDP,
    so ``divisors`` is carried for reporting.  ``objectives`` re-evaluates
    candidates of traces without true costs (needed for surrogate runs).
    """
    rows: list[ReportRow] = []
    finals: dict[tuple[str, str], float] = {}
    for (pname, method) in sorted(results, key=lambda k: (list(divisors).index(k[0]), k[1])):
        traces = results[(pname, method)]
        if not traces:
            raise AggregationError(f"no traces for {pname}/{method}")
        cache: dict = {}
        obj = (objectives or {}).get(pname)
        curves = []
        for tr in traces:
            if obj is None and any(s.true_obj is None for s in tr.steps):
                raise AggregationError(f"{pname}/{method}: trace lacks true costs and no objective given")
            curves.append(true_curve(tr, obj, cache))
        lengths = {len(c) for c in curves}
        timed = all(s.elapsed_ns is not None for tr in traces for s in tr.steps)
        if len(lengths) != 1 and not timed:
            raise AggregationError(f"{pname}/{method}: ragged trace lengths {sorted(lengths)}")
        if not timed:
            n = lengths.pop()
            stack = np.stack(curves)
            for c in iteration_checkpoints(n):
                rows.append(ReportRow(pname, method, "iteration", c, float(stack[:, c - 1].mean()), len(traces)))
            finals[(pname, method)] = float(stack[:, -1].mean())
        else:
            n = min(len(c) for c in curves)
            stack = np.stack([c[:n] for c in curves])
            for c in iteration_checkpoints(n):
                rows.append(ReportRow(pname, method, "iteration", c, float(stack[:, c - 1].mean()), len(traces)))
            stamps = [np.array([s.elapsed_ns for s in tr.steps], dtype=float) for tr in traces]
            t_lo = min(s[0] for s in stamps)
            t_hi = max(s[-1] for s in stamps)
            for tc in time_checkpoints(t_lo, t_hi):
                vals = []
                for cv, st in zip(curves, stamps):
                    k = int(np.searchsorted(st, tc, side="right"))
                    vals.append(cv[k - 1] if k > 0 else np.nan)
                rows.append(ReportRow(pname, method, "time_ns", tc, float(np.nanmean(vals)) if not all(
                    np.isnan(vals)) else float("nan"), len(traces)))
            finals[(pname, method)] = float(np.mean([c[-1] for c in curves]))

    methods = sorted({m for _, m in finals})
    ratios = []
    for i, a in enumerate(methods):
        for b in methods[i + 1 :]:
            per = [finals[(p, b)] / finals[(p, a)] for p in divisors if (p, a) in finals and (p, b) in finals]
            if per:
                ratios.append((a, b, float(np.mean(per)), float(np.exp(np.mean(np.log(per)))), len(per)))
    return ComparisonReport(rows, dict(divisors), ratios)


def lower_bound_edp(cfg: ExperimentConfig, problem: Problem) -> float:
    return algorithmic_minimum(cfg.accel, problem).edp


# ---- cost surface -------------------------------------------------------------------


def surface(cfg: ExperimentConfig, problem: Problem, x: str, y: str, seed: int = 0):
    """EDP over every (L2 tile of ``x``, L2 tile of ``y``) divisor pair.

    All other attributes come from one random valid mapping; the swept dims
    have their L1 tile and parallel degree set to 1 so that every divisor is
    a legal L2 tile.  Points whose tiles overflow their bank allocation are
    reported as invalid.  Yields ``(tile_x, tile_y, edp or None)``.
    """
    ctx = make_ctx(problem, cfg.accel)
    names = ctx.dim_names
    dx, dy = names.index(x), names.index(y)
    if dx == dy:
        raise ValueError("surface axes must be two different dims")
    base = get_mapping(ctx, seed)
    for tx in divisors(int(ctx.bounds[dx])):
        for ty in divisors(int(ctx.bounds[dy])):
            l2 = list(base.tiles[1])
            l1 = list(base.tiles[2])
            par = list(base.par)
            l2[dx], l2[dy] = tx, ty
            l1[dx] = l1[dy] = par[dx] = par[dy] = 1
            m = Mapping(tiles=(base.tiles[0], tuple(l2), tuple(l1)), par=tuple(par), order=base.order,
                        alloc=base.alloc)
            yield tx, ty, (evaluate_ctx(ctx, m).edp if is_member(ctx, m) else None)
