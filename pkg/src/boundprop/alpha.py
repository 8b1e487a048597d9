"""Projected-gradient optimization of ReLU lower slopes.

Each unstable neuron's lower-side slope becomes a parameter in [0, 1],
held per (node, branch, side) so the lower and upper bound of every spec
branch get independently tuned envelopes.  Iteration 1 evaluates the
warm-start slopes (the adaptive defaults), so the best-so-far solution
can never fall behind the unoptimized analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import (
    AnalysisContext,
    AnalysisMode,
    Deadline,
    ReluRelaxation,
    SpecMatrix,
)
from .errors import AnalysisTimeout, BoundPropError
from .graph import NetworkGraph, NodeKind
from .tape import Tape, TapeValue
from .tensors import BoundedTensor, Tensor, as_tensor


@dataclass
class OptimizerConfig:
    iterations: int = 20
    lr: float = 0.5
    lr_decay: float = 0.98
    patience: int = 5
    optimize_lower: bool = True
    optimize_upper: bool = True
    best_restore: bool = True
    seed: int = 0  # reserved; the optimizer itself is deterministic

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not (self.lr > 0.0):
            raise ValueError("lr must be positive")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


class AlphaStore:
    """Slope parameters keyed node -> branch -> side, stored compactly
    over each layer's unstable neurons (stable slopes are not learnable)."""

    def __init__(self):
        self.slopes: dict[int, dict[int, dict[str, np.ndarray]]] = {}
        self.masks: dict[int, np.ndarray] = {}  # node -> unstable-neuron mask
        self.base: dict[int, np.ndarray] = {}   # node -> stable-slope template

    def ensure_alpha(self, node_id: int, branch: int, side: str,
                     stability: np.ndarray, default_slopes) -> np.ndarray | None:
        """Allocate (once) and return the compact parameter vector; a layer
        with no unstable neuron gets no parameters and returns None."""
        mask = np.asarray(stability) == 0
        if not mask.any():
            return None
        if node_id not in self.masks:
            self.masks[node_id] = mask
            self.base[node_id] = np.where(np.asarray(stability) == 1, 1.0, 0.0)
        per_branch = self.slopes.setdefault(node_id, {}).setdefault(branch, {})
        if side not in per_branch:
            per_branch[side] = as_tensor(default_slopes).reshape(-1)[mask].copy()
        return per_branch[side]

    def compact(self, node_id: int, branch: int, side: str) -> np.ndarray | None:
        return self.slopes.get(node_id, {}).get(branch, {}).get(side)

    def lower_slopes(self, node_id: int, branch: int, side: str) -> np.ndarray | None:
        """Full-width slope vector for plain (untaped) evaluation."""
        compact = self.compact(node_id, branch, side)
        if compact is None:
            return None
        full = self.base[node_id].copy()
        full[self.masks[node_id]] = compact
        return full

    def entries(self):
        for node_id, per_branch in self.slopes.items():
            for branch, per_side in per_branch.items():
                for side, arr in per_side.items():
                    yield node_id, branch, side, arr

    def node_ids(self, branch: int, side: str) -> list[int]:
        return [nid for nid, b, s, _ in self.entries() if b == branch and s == side]


def project_alphas(store: AlphaStore) -> None:
    """Clamp every parameter into [0, 1] in place (identity preserved)."""
    for _, _, _, arr in store.entries():
        np.clip(arr, 0.0, 1.0, out=arr)


def alpha_objective(bounds: TapeValue, side: str) -> TapeValue:
    """Scalar loss: minimize -sum(lower bounds) or +sum(upper bounds)."""
    if bounds.value.size == 0:
        raise ValueError("objective needs at least one spec row")
    if side not in ("lower", "upper"):
        raise ValueError(f"unknown side: {side!r}")
    total = bounds.tape.sum(bounds)
    return bounds.tape.scale(total, -1.0) if side == "lower" else total


@dataclass
class AlphaResult:
    branch_bounds: list[BoundedTensor]
    store: AlphaStore
    passes: int
    iterations_used: int
    complete: bool = True


def _unstable_relus(ctx: AnalysisContext) -> list[int]:
    """ReLU nodes feeding the output whose pre-activation straddles zero."""
    anc = engine._ancestors(ctx.graph, ctx.graph.output_id)
    out = []
    for nid in ctx.graph.order:
        if nid not in anc:
            continue
        node = ctx.graph.nodes[nid]
        if node.kind is NodeKind.RELU:
            r = engine.default_relaxation(ctx, nid)
            if np.any(r.stability == 0):
                out.append(nid)
    return out


def _optimize_side(ctx: AnalysisContext, spec: SpecMatrix, side: str,
                   relu_ids: list[int], store: AlphaStore, config: OptimizerConfig):
    """Tune one branch's slopes for one side.

    Returns (bounds vector or None, iterations run, timed_out flag).
    """
    branch = spec.branch
    for nid in relu_ids:
        base = engine.default_relaxation(ctx, nid)
        store.ensure_alpha(nid, branch, side, base.stability, base.lower_slope)
    if not store.node_ids(branch, side):
        return None, 0, False

    lr = config.lr
    best_obj = np.inf
    best_alpha: dict[int, np.ndarray] | None = None
    best_bounds: np.ndarray | None = None
    last_bounds: np.ndarray | None = None
    streak = 0
    iters = 0
    timed_out = False

    for _ in range(config.iterations):
        try:
            ctx.deadline.check()
            tape = Tape(grad_enabled=True)
            params: dict[int, TapeValue] = {}

            def relax_for(nid: int, _side: str) -> ReluRelaxation:
                base = engine.default_relaxation(ctx, nid)
                compact = store.compact(nid, branch, side)
                if compact is None:
                    return base
                if nid not in params:
                    params[nid] = tape.parameter(compact)
                full = tape.select_by_mask(store.masks[nid], params[nid], store.base[nid])
                return ReluRelaxation(base.stability, full, base.upper_slope,
                                      base.upper_intercept)

            lower_tv, upper_tv = engine.spec_pass(
                ctx,
                spec.rows if side == "lower" else None,
                spec.rows if side == "upper" else None,
                relax_for, tape)
            bounds = lower_tv if side == "lower" else upper_tv
            objective = alpha_objective(bounds, side)
        except AnalysisTimeout:
            timed_out = True
            break

        iters += 1
        obj_val = float(objective.value)
        pre_step = {nid: store.slopes[nid][branch][side].copy() for nid in params}
        last_bounds = np.asarray(bounds.value).copy()

        # gradient step at the current learning rate, then decay
        grads = tape.backward(objective)
        for nid, p in params.items():
            store.slopes[nid][branch][side] -= lr * grads[p]
        lr *= config.lr_decay
        project_alphas(store)

        if obj_val < best_obj:
            best_obj = obj_val
            best_alpha = pre_step
            best_bounds = last_bounds
            streak = 0
        else:
            streak += 1
            if streak >= config.patience:
                break

    if config.best_restore and best_alpha is not None:
        for nid, arr in best_alpha.items():
            store.slopes[nid][branch][side][:] = arr
        return best_bounds, iters, timed_out
    return last_bounds if last_bounds is not None else best_bounds, iters, timed_out


def run_alpha_crown(graph: NetworkGraph, input_box: BoundedTensor,
                    branches: list[SpecMatrix], config: OptimizerConfig | None = None,
                    deadline: Deadline | None = None) -> AlphaResult:
    """CROWN with learned lower slopes, per branch and per side.

    Intermediate boxes are computed once with default slopes and frozen,
    so every iteration costs a single output pass.  Falls back to the
    unoptimized bounds when the input box is unbounded (gradient passes
    need finite arithmetic) or nothing is unstable.
    """
    config = config or OptimizerConfig()
    config.validate()
    if not branches:
        raise ValueError("at least one spec branch required")
    ctx = engine.prepare_analysis(graph, input_box, AnalysisMode.CROWN_STANDARD, deadline)
    engine.ensure_pre_activation_bounds(ctx, graph.output_id)

    # warm-start reference: the plain analysis, stacked exactly like run_crown
    a0 = np.vstack([b.rows for b in branches])
    lower, upper = engine.spec_pass(ctx, a0, a0)
    baseline = engine._split_rows(lower.value, upper.value, branches)

    store = AlphaStore()
    if not ctx.input_box.is_finite():
        return AlphaResult(baseline, store, ctx.passes, 0, True)
    relu_ids = _unstable_relus(ctx)
    sides = [s for s, on in (("lower", config.optimize_lower),
                             ("upper", config.optimize_upper)) if on]
    if not relu_ids or not sides:
        return AlphaResult(baseline, store, ctx.passes, 0, True)

    finals = [[b.lower.copy(), b.upper.copy()] for b in baseline]
    iterations_used = 0
    complete = True
    for b_i, spec in enumerate(branches):
        for side in sides:
            if not complete:
                break
            vec, iters, timed_out = _optimize_side(ctx, spec, side, relu_ids, store, config)
            iterations_used += iters
            if timed_out:
                complete = False
            if vec is None:
                continue
            if side == "lower":
                finals[b_i][0] = (np.maximum(finals[b_i][0], vec)
                                  if config.best_restore else vec)
            else:
                finals[b_i][1] = (np.minimum(finals[b_i][1], vec)
                                  if config.best_restore else vec)
        if not complete:
            break

    bounds = [BoundedTensor(lo, hi) for lo, hi in finals]
    return AlphaResult(bounds, store, ctx.passes, iterations_used, complete)
