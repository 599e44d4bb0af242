"""Projected gradient descent on the surrogate with periodic random injections."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mapspace import MapSpaceCtx, encode, get_mapping, get_projection
from ..surrogate import MlpModel, edp_value_and_gradient, forward, predicted_edp
from .base import SearchBudget, SearchTrace, TraceStep, TrueObjective, _Clock, accept


class ModelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GradSearchConfig:
    alpha: float = 1.0
    inject_every: int = 10
    T0: float = 50.0
    anneal_factor: float = 0.75
    anneal_every_injections: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.inject_every < 1 or self.anneal_every_injections < 1:
            raise ValueError("injection and annealing periods must be >= 1")
        if not self.T0 > 0:
            raise ValueError("T0 must be positive")
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal factor must be in (0, 1)")


def check_model(ctx: MapSpaceCtx, model: MlpModel) -> None:
    if model.kind is not ctx.kind:
        raise ModelMismatchError(f"model was trained for {model.kind}, search is over {ctx.kind.value}")
    if model.n_in != ctx.vector_length or model.n_pid != ctx.n_dims:
        raise ModelMismatchError("model input layout does not match the map space")
    if model.norm is None:
        raise ModelMismatchError("model carries no normalization stats")
    if model.norm.accel_fingerprint != ctx.accel.fingerprint():
        raise ModelMismatchError("model was trained for a different accelerator")


def gradient_search(ctx: MapSpaceCtx, model: MlpModel, cfg: GradSearchConfig = GradSearchConfig(),
                    budget: SearchBudget = SearchBudget(max_iterations=1000)) -> SearchTrace:
    """Minimize the surrogate's predicted normalized EDP.

    Each iteration predicts the current mapping's cost (one forward pass plus
    backpropagation to the input), steps the normalized vector against the
    gradient, and projects it back onto the map space in raw units.  Every
    ``inject_every`` iterations a fresh random mapping replaces the current
    one if :func:`accept` says so on predicted costs.  The true cost model is
    consulted once, for the best predicted mapping, after the budget ends.
    """
    check_model(ctx, model)
    st = model.norm
    rng = np.random.default_rng(cfg.seed)
    clock = _Clock(budget)
    trace = SearchTrace("mm", cfg.seed)

    m = get_mapping(ctx, rng)
    z = st.norm_x(encode(ctx, m))
    T = cfg.T0
    injections = accepted = 0
    best = np.inf
    while clock.running():
        t = clock.t
        if t > 0 and t % cfg.inject_every == 0:
            m_rand = get_mapping(ctx, rng)
            z_rand = st.norm_x(encode(ctx, m_rand))
            cur = float(predicted_edp(model, forward(model, z))[0][0])
            cand = float(predicted_edp(model, forward(model, z_rand))[0][0])
            injections += 1
            if accept(cand, cur, T, rng):
                m, z = m_rand, z_rand
                accepted += 1
            if injections % cfg.anneal_every_injections == 0:
                T *= cfg.anneal_factor
        val, g = edp_value_and_gradient(model, z)
        if val < best:
            best = val
            trace.best_mapping = m
        trace.steps.append(TraceStep(t, m, clock.stamp(), val, None, best))
        if cfg.alpha > 0:
            m = get_projection(ctx, st.denorm_x(z - cfg.alpha * g))
            z = st.norm_x(encode(ctx, m))
        clock.t += 1

    true_obj = TrueObjective(ctx)
    trace.best_true_obj_final = true_obj(trace.best_mapping)
    trace.n_true_evals = true_obj.calls
    trace.extra.update(injections=injections, accepted_injections=accepted, final_temperature=T)
    return trace
