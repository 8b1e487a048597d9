"""Bound propagation engine: forward interval bounds, backward linear
bounds (with either lazily tightened or IBP intermediate boxes), ReLU
relaxations, specification rows, and concretization.

The backward pass walks the reverse dependency graph accumulating one
coefficient matrix per node per side, so fan-out (a node feeding several
successors) sums contributions before the node's own rule is applied.
All matrix work runs through a Tape so the same code path serves both
plain analysis (grad disabled) and slope optimization (grad enabled).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AnalysisTimeout, BoundPropError, GraphError, ShapeError
from .graph import LINEAR_KINDS, GraphNode, NetworkGraph, NodeKind
from .tape import Tape, TapeValue
from .tensors import (
    BoundedTensor,
    Tensor,
    as_tensor,
    pos_neg_split,
    posneg_bounds,
)
from .vnnlib import OutputConstraintSet


class AnalysisMode(Enum):
    IBP = "ibp"
    CROWN_STANDARD = "crown-standard"  # the default analysis
    CROWN_IBP = "crown-ibp"
    ALPHA_CROWN = "alpha-crown"


class Deadline:
    """Wall-clock budget checked between node steps and between passes."""

    def __init__(self, seconds: float | None = None):
        self.expires = None if seconds is None else time.monotonic() + float(seconds)

    def check(self) -> None:
        if self.expires is not None and time.monotonic() > self.expires:
            raise AnalysisTimeout()


@dataclass
class SpecMatrix:
    """One branch of linear output constraints: rows @ y <= rhs."""

    rows: Tensor  # (s, m)
    rhs: Tensor   # (s,)
    branch: int = 0

    def __post_init__(self):
        self.rows = as_tensor(self.rows)
        self.rhs = as_tensor(self.rhs).reshape(-1)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError(f"spec rows must be a non-empty matrix, got {self.rows.shape}")
        if self.rhs.size != self.rows.shape[0]:
            raise ValueError("one rhs entry per spec row required")


@dataclass
class LinearBoundsState:
    """Affine bounds on the spec rows in terms of one node's values:

        A_L @ z + b_L  <=  spec output  <=  A_U @ z + b_U
    """

    target: int
    A_L: Tensor
    A_U: Tensor
    b_L: Tensor
    b_U: Tensor


@dataclass
class ReluRelaxation:
    """Per-neuron linear envelope of one ReLU layer.

    stability: +1 active (identity), -1 inactive (zero), 0 unstable.
    The lower side is a line through the origin (slope in [0,1], possibly
    a gradient-carrying TapeValue); the upper side is the chord.
    """

    stability: np.ndarray
    lower_slope: object        # Tensor or TapeValue, full layer width
    upper_slope: Tensor
    upper_intercept: Tensor

    @property
    def lower_intercept(self) -> Tensor:
        return np.zeros_like(self.upper_intercept)


def layer_relaxation(box: BoundedTensor, alpha_source: BoundedTensor | None = None,
                     lower_slope_override=None) -> ReluRelaxation:
    """Relaxation of a whole ReLU layer from its pre-activation box.

    The chord comes from ``box``; the default lower slope applies the
    adaptive rule (1 if u >= -l else 0) evaluated on ``alpha_source`` when
    given, so refining a box does not flip slope choices mid-analysis.
    """
    l = box.lower.reshape(-1)
    u = box.upper.reshape(-1)
    if np.any(l > u):
        raise ValueError("lower > upper in pre-activation box")
    n = l.size
    inactive = u <= 0.0               # checked first: l = u = 0 counts inactive
    active = ~inactive & (l >= 0.0)
    unstable = ~inactive & ~active
    stability = np.where(inactive, -1, np.where(active, 1, 0)).astype(np.int8)

    lam = np.zeros(n)
    mu = np.zeros(n)
    lam[active] = 1.0
    fin = unstable & np.isfinite(l) & np.isfinite(u)
    if fin.any():
        d = np.maximum(u[fin] - l[fin], 1e-12)
        lam[fin] = u[fin] / d
        mu[fin] = -u[fin] * l[fin] / d
    lo_inf = unstable & np.isinf(l) & np.isfinite(u)
    lam[lo_inf] = 0.0
    mu[lo_inf] = u[lo_inf]
    hi_inf = unstable & np.isfinite(l) & np.isinf(u)
    lam[hi_inf] = 1.0
    mu[hi_inf] = -l[hi_inf]
    both_inf = unstable & np.isinf(l) & np.isinf(u)
    lam[both_inf] = 1.0
    mu[both_inf] = np.inf

    lower = np.zeros(n)
    lower[active] = 1.0
    if lower_slope_override is not None:
        ov = as_tensor(lower_slope_override).reshape(-1)
        if ov.size != n:
            raise ShapeError(f"slope override of size {ov.size} for layer of width {n}")
        lower[unstable] = ov[unstable]
    else:
        src = alpha_source if alpha_source is not None else box
        sl = src.lower.reshape(-1)
        su = src.upper.reshape(-1)
        adaptive = np.where(su >= -sl, 1.0, 0.0)
        lower[unstable] = adaptive[unstable]
    return ReluRelaxation(stability, lower, lam, mu)


def relu_relaxation(l: float, u: float, lower_slope_override: float | None = None) -> ReluRelaxation:
    """Single-neuron relaxation (arrays of size one)."""
    if l > u:
        raise ValueError(f"invalid pre-activation interval [{l}, {u}]")
    box = BoundedTensor(np.array([float(l)]), np.array([float(u)]))
    ov = None if lower_slope_override is None else np.array([float(lower_slope_override)])
    return layer_relaxation(box, lower_slope_override=ov)


# ---------------------------------------------------------------------------
# specification rows
# ---------------------------------------------------------------------------

def preprocess_C(spec: OutputConstraintSet | None, m: int) -> list[SpecMatrix]:
    """Spec branches as dense row matrices; absent spec bounds each output
    independently via the identity matrix (rhs zero placeholder)."""
    if spec is None:
        return [SpecMatrix(np.eye(m), np.zeros(m), 0)]
    out = []
    for b_i, branch in enumerate(spec.branches):
        if not branch:
            raise ValueError(f"branch {b_i} has no constraint rows")
        rows = np.zeros((len(branch), m))
        rhs = np.zeros(len(branch))
        for r_i, row in enumerate(branch):
            for t in row.terms:
                if t.index >= m:
                    raise ValueError(f"Y_{t.index} out of range for output size {m}")
                rows[r_i, t.index] += t.coefficient
            rhs[r_i] = row.rhs
        out.append(SpecMatrix(rows, rhs, b_i))
    return out


# ---------------------------------------------------------------------------
# forward interval phase
# ---------------------------------------------------------------------------

def compute_ibp_bounds(graph: NetworkGraph, input_box: BoundedTensor,
                       deadline: Deadline | None = None) -> BoundedTensor:
    """Forward pass filling every node's ibp slot; returns the output box."""
    box = input_box.flat()
    if box.size != graph.input_size:
        raise ShapeError(f"input box of size {box.size} for network input {graph.input_size}")
    deadline = deadline or Deadline()
    boxes: dict[int, BoundedTensor] = {}
    for node in graph:
        deadline.check()
        node.ibp = graph.interval_step(node, boxes, box)
        boxes[node.id] = node.ibp
    return graph.nodes[graph.output_id].ibp


@dataclass
class AnalysisContext:
    """Per-analysis state: the graph with bound slots filled, the input
    box, mode flags, a deadline, the backward-pass counter, and cached
    default relaxations."""

    graph: NetworkGraph
    input_box: BoundedTensor
    mode: AnalysisMode
    deadline: Deadline
    passes: int = 0
    relax: dict[int, ReluRelaxation] = field(default_factory=dict)


def prepare_analysis(graph: NetworkGraph, input_box: BoundedTensor,
                     mode: AnalysisMode = AnalysisMode.CROWN_STANDARD,
                     deadline: Deadline | None = None) -> AnalysisContext:
    """Phase 1: clear old bounds, run IBP, mark concrete boxes per mode.

    CROWN_IBP marks every node concrete from its IBP box (so no lazy
    passes can trigger); every other mode marks only the Input.
    """
    deadline = deadline or Deadline()
    box = input_box.flat()
    graph.clear_bounds()
    compute_ibp_bounds(graph, box, deadline)
    if mode is AnalysisMode.CROWN_IBP:
        for node in graph.nodes.values():
            node.concrete = node.ibp
            node.has_concrete = True
    else:
        inp = graph.nodes[graph.input_id]
        inp.concrete = box
        inp.has_concrete = True
    return AnalysisContext(graph, box, mode, deadline)


def default_relaxation(ctx: AnalysisContext, relu_id: int) -> ReluRelaxation:
    """The relaxation of a ReLU node from its pre-activation's concrete
    box, with the slope choice pinned to the IBP box (cached)."""
    r = ctx.relax.get(relu_id)
    if r is None:
        node = ctx.graph.nodes[relu_id]
        pre = ctx.graph.nodes[node.inputs[0][0]]
        if not pre.has_concrete:
            raise BoundPropError(f"missing relaxation for node {relu_id}")
        r = layer_relaxation(pre.concrete, alpha_source=pre.ibp)
        ctx.relax[relu_id] = r
    return r


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _ancestors(graph: NetworkGraph, start_id: int) -> set[int]:
    seen = {start_id}
    stack = [start_id]
    while stack:
        for i in graph.forward_deps[stack.pop()]:
            if i not in seen:
                seen.add(i)
                stack.append(i)
    return seen


def _intercept_term(tape: Tape, a_part: TapeValue, mu: Tensor) -> TapeValue:
    """a_part @ mu under the 0 * inf == 0 convention.

    a_part is sign-definite (one half of a pos/neg split), so a row that
    touches an infinite intercept resolves to a single signed infinity.
    """
    if np.isfinite(mu).all():
        return tape.matmul(a_part, mu)
    if tape.grad_enabled:
        raise BoundPropError("gradient mode requires finite pre-activation bounds")
    a = a_part.value
    out = a @ np.where(np.isfinite(mu), mu, 0.0)
    hit = (a != 0.0) & ~np.isfinite(mu)[None, :]
    out = np.where((hit & (a > 0.0)).any(axis=1), np.inf, out)
    out = np.where((hit & (a < 0.0)).any(axis=1), -np.inf, out)
    return tape.leaf(out)


def _constant_operand(graph: NetworkGraph, node_id: int, width: int) -> Tensor:
    value = graph.nodes[node_id].attrs["value"].reshape(-1)
    if value.size == 1 and width != 1:
        return np.full(width, value[0])
    return value


def _through_node(graph: NetworkGraph, node: GraphNode, A: TapeValue, side: str,
                  bias: TapeValue, relax_for, tape: Tape):
    """Push spec-row coefficients backward through one node.

    Returns ([(input node id, coefficient contribution)], new bias).
    """
    kind = node.kind
    if kind in LINEAR_KINDS:
        w = node.attrs["weight"]
        b = node.attrs.get("bias")
        new_a = tape.matmul(A, w)
        if b is not None:
            bias = tape.add(bias, tape.matmul(A, b))
        return [(node.activation_inputs()[0], new_a)], bias

    if kind in (NodeKind.ADD, NodeKind.SUB):
        contribs = []
        for slot, (iid, role) in enumerate(node.inputs):
            negate = kind is NodeKind.SUB and slot == 1
            if role.value == "constant":
                c = _constant_operand(graph, iid, node.size)
                bias = tape.add(bias, tape.matmul(A, -c if negate else c))
                continue
            out_a = tape.scale(A, -1.0) if negate else A
            operand = graph.nodes[iid]
            if operand.size == 1 and node.size != 1:
                # broadcast operand: its one value collects every column
                out_a = tape.matmul(out_a, np.ones((node.size, 1)))
            contribs.append((iid, out_a))
        return contribs, bias

    if kind is NodeKind.RELU:
        r = relax_for(node.id, side)
        if r is None:
            raise BoundPropError(f"missing relaxation for node {node.id}")
        a_pos, a_neg = tape.pos_neg_split(A)
        if side == "lower":
            new_a = tape.add(tape.elementwise_mul(a_pos, r.lower_slope),
                             tape.elementwise_mul(a_neg, r.upper_slope))
            bias = tape.add(bias, _intercept_term(tape, a_neg, r.upper_intercept))
        else:
            new_a = tape.add(tape.elementwise_mul(a_pos, r.upper_slope),
                             tape.elementwise_mul(a_neg, r.lower_slope))
            bias = tape.add(bias, _intercept_term(tape, a_pos, r.upper_intercept))
        return [(node.inputs[0][0], new_a)], bias

    if kind in (NodeKind.FLATTEN, NodeKind.RESHAPE):
        # flat row-major storage: a pure relabeling of the same columns
        return [(node.inputs[0][0], A)], bias

    raise GraphError(f"cannot propagate backward through {kind.value} node {node.id}")


def _backward_pass(ctx: AnalysisContext, start_id: int, A0_lower, A0_upper,
                   relax_for, tape: Tape):
    """Walk from ``start_id`` to the Input, accumulating per-node
    coefficients; either side may be disabled by passing None.

    Returns (A_L, b_L, A_U, b_U) as TapeValues (None for skipped sides).
    """
    graph = ctx.graph
    sides = [s for s, a in (("lower", A0_lower), ("upper", A0_upper)) if a is not None]
    n_rows = (A0_lower if A0_lower is not None else A0_upper).shape[0]
    anc = _ancestors(graph, start_id)
    order = [i for i in graph.order if i in anc]

    pend = {s: {} for s in sides}
    bias = {s: tape.leaf(np.zeros(n_rows)) for s in sides}
    result = {s: None for s in sides}
    for s, a0 in (("lower", A0_lower), ("upper", A0_upper)):
        if a0 is not None:
            pend[s][start_id] = a0 if isinstance(a0, TapeValue) else tape.leaf(a0)

    for nid in reversed(order):
        ctx.deadline.check()
        node = graph.nodes[nid]
        for s in sides:
            a = pend[s].pop(nid, None)
            if a is None:
                continue
            if nid == graph.input_id:
                result[s] = a
                continue
            contribs, bias[s] = _through_node(graph, node, a, s, bias[s], relax_for, tape)
            for iid, contrib in contribs:
                prev = pend[s].get(iid)
                pend[s][iid] = contrib if prev is None else tape.add(prev, contrib)

    for s in sides:
        if result[s] is None:
            raise GraphError(f"Input node unreachable from node {start_id}")
    return (result.get("lower"), bias.get("lower"),
            result.get("upper"), bias.get("upper"))


def _ext_add(vals: Tensor, bias, side: str) -> Tensor:
    """vals + bias where either may hold infinities; on a sign clash the
    conservative direction for ``side`` wins instead of producing NaN."""
    vals = np.asarray(vals, dtype=np.float64)
    bias = np.broadcast_to(np.asarray(bias, dtype=np.float64), vals.shape)
    if np.isfinite(vals).all() and np.isfinite(bias).all():
        return vals + bias
    out = np.where(np.isfinite(vals), vals, 0.0) + np.where(np.isfinite(bias), bias, 0.0)
    neg = np.isneginf(vals) | np.isneginf(bias)
    pos = np.isposinf(vals) | np.isposinf(bias)
    if side == "lower":
        out = np.where(pos, np.inf, out)
        out = np.where(neg, -np.inf, out)
    else:
        out = np.where(neg, -np.inf, out)
        out = np.where(pos, np.inf, out)
    return out


def _concretize_side(tape: Tape, A: TapeValue, b: TapeValue,
                     box: BoundedTensor, side: str) -> TapeValue:
    """Numeric per-row bound from coefficients and the target node's box."""
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    if box.is_finite():
        a_pos, a_neg = tape.pos_neg_split(A)
        first, second = (lo, hi) if side == "lower" else (hi, lo)
        return tape.add(tape.add(tape.matmul(a_pos, first),
                                 tape.matmul(a_neg, second)), b)
    if tape.grad_enabled:
        raise BoundPropError("gradient mode requires a finite input box")
    w_pos, w_neg = pos_neg_split(A.value)
    raw = posneg_bounds(w_pos, w_neg, box)
    vals = (_ext_add(raw.lower, b.value, "lower") if side == "lower"
            else _ext_add(raw.upper, b.value, "upper"))
    return tape.leaf(vals)


# ---------------------------------------------------------------------------
# spec-facing operations
# ---------------------------------------------------------------------------

def node_backward(graph: NetworkGraph, node: GraphNode, incoming: LinearBoundsState,
                  relaxations: dict[int, ReluRelaxation]) -> LinearBoundsState:
    """One backward step through a single-activation-input node."""
    if incoming.target != node.id:
        raise GraphError(f"state targets node {incoming.target}, not {node.id}")
    acts = node.activation_inputs()
    if len(acts) != 1:
        raise GraphError("node_backward expects exactly one activation input; "
                         "multi-input accumulation happens in backward_from")
    tape = Tape(grad_enabled=False)

    def relax_for(nid, _side):
        r = relaxations.get(nid)
        if r is None:
            raise BoundPropError(f"missing relaxation for node {nid}")
        return r

    out = {}
    for side, a0, b0 in (("lower", incoming.A_L, incoming.b_L),
                         ("upper", incoming.A_U, incoming.b_U)):
        contribs, bias = _through_node(graph, node, tape.leaf(a0), side,
                                       tape.leaf(b0), relax_for, tape)
        (iid, a_new), = contribs
        out[side] = (a_new.value, bias.value, iid)
    return LinearBoundsState(out["lower"][2], out["lower"][0], out["upper"][0],
                             out["lower"][1], out["upper"][1])


def backward_from(ctx: AnalysisContext, start_id: int,
                  spec_rows: Tensor | None = None) -> LinearBoundsState:
    """Full backward propagation from a node to the Input, triggering the
    lazy intermediate-bound logic the current mode calls for."""
    node = ctx.graph.nodes[start_id]
    a0 = np.eye(node.size) if spec_rows is None else as_tensor(spec_rows)
    if a0.ndim != 2 or a0.shape[1] != node.size:
        raise ShapeError(f"spec rows {a0.shape} do not match node size {node.size}")
    ensure_pre_activation_bounds(ctx, start_id)
    tape = Tape(grad_enabled=False)
    a_l, b_l, a_u, b_u = _backward_pass(
        ctx, start_id, a0, a0, lambda nid, side: default_relaxation(ctx, nid), tape)
    ctx.passes += 1
    return LinearBoundsState(ctx.graph.input_id, a_l.value, a_u.value, b_l.value, b_u.value)


def concretize(state: LinearBoundsState, box: BoundedTensor) -> BoundedTensor:
    """Per-row numeric bounds from an affine bound state and the box of
    the node it targets."""
    flat = box.flat()
    if state.A_L.shape[1] != flat.size:
        raise ShapeError(f"coefficients {state.A_L.shape} do not match box of size {flat.size}")
    lw_pos, lw_neg = pos_neg_split(state.A_L)
    uw_pos, uw_neg = pos_neg_split(state.A_U)
    if flat.is_finite() and np.isfinite(state.b_L).all() and np.isfinite(state.b_U).all():
        lower = posneg_bounds(lw_pos, lw_neg, flat, bias_lower=state.b_L).lower
        upper = posneg_bounds(uw_pos, uw_neg, flat, bias_upper=state.b_U).upper
    else:
        lower = _ext_add(posneg_bounds(lw_pos, lw_neg, flat).lower, state.b_L, "lower")
        upper = _ext_add(posneg_bounds(uw_pos, uw_neg, flat).upper, state.b_U, "upper")
    return BoundedTensor(lower, upper)


def _elementwise_only(graph: NetworkGraph, node_id: int) -> bool:
    """True when every path from ``node_id`` back to a concretely bounded
    node crosses no linear layer (so the IBP box is as good as a pass)."""
    stack = [node_id]
    seen = set()
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        node = graph.nodes[i]
        if node.has_concrete:
            continue
        if node.kind in LINEAR_KINDS:
            return False
        stack.extend(graph.forward_deps[i])
    return True


def compute_intermediate_bounds_lazy(ctx: AnalysisContext, node_id: int) -> BoundedTensor:
    """Concrete box for a pre-activation node, memoized.

    Reuses the IBP box when the layer is fully stable under it or when
    only elementwise operations separate the node from bounded territory;
    otherwise launches a dedicated backward pass and intersects with IBP.
    """
    node = ctx.graph.nodes[node_id]
    if node.has_concrete:
        return node.concrete
    box = node.ibp
    if box is None:
        raise BoundPropError(f"node {node_id} has no interval bounds yet")
    any_unstable = bool(np.any((box.lower < 0.0) & (box.upper > 0.0)))
    if not any_unstable or _elementwise_only(ctx.graph, node_id):
        node.concrete = box
    else:
        tape = Tape(grad_enabled=False)
        eye = np.eye(node.size)
        a_l, b_l, a_u, b_u = _backward_pass(
            ctx, node_id, eye, eye, lambda nid, side: default_relaxation(ctx, nid), tape)
        ctx.passes += 1
        lower = _concretize_side(tape, a_l, b_l, ctx.input_box, "lower").value
        upper = _concretize_side(tape, a_u, b_u, ctx.input_box, "upper").value
        node.concrete = BoundedTensor(lower, upper).intersect(box)
    node.has_concrete = True
    return node.concrete


def ensure_pre_activation_bounds(ctx: AnalysisContext, start_id: int) -> None:
    """Give every ReLU among the start node's ancestors a concretely
    bounded pre-activation (forward order, so lazy passes only ever cross
    already-bounded ReLUs)."""
    anc = _ancestors(ctx.graph, start_id)
    for nid in ctx.graph.order:
        if nid not in anc and nid != start_id:
            continue
        node = ctx.graph.nodes[nid]
        if node.kind is NodeKind.RELU:
            compute_intermediate_bounds_lazy(ctx, node.inputs[0][0])


def spec_pass(ctx: AnalysisContext, A0_lower, A0_upper, relax_for=None,
              tape: Tape | None = None):
    """One backward pass from the output over spec rows, concretized.

    Returns per-row (lower, upper) TapeValues; a side passed as None is
    skipped and returned as None.
    """
    tape = tape or Tape(grad_enabled=False)
    if relax_for is None:
        relax_for = lambda nid, side: default_relaxation(ctx, nid)
    a_l, b_l, a_u, b_u = _backward_pass(ctx, ctx.graph.output_id, A0_lower, A0_upper,
                                        relax_for, tape)
    ctx.passes += 1
    lower = (_concretize_side(tape, a_l, b_l, ctx.input_box, "lower")
             if a_l is not None else None)
    upper = (_concretize_side(tape, a_u, b_u, ctx.input_box, "upper")
             if a_u is not None else None)
    return lower, upper


# ---------------------------------------------------------------------------
# whole-analysis drivers
# ---------------------------------------------------------------------------

@dataclass
class CrownResult:
    branch_bounds: list[BoundedTensor]  # per branch, one [lo, hi] pair per spec row
    passes: int
    complete: bool = True


def ibp_branch_bounds(output_box: BoundedTensor, branches: list[SpecMatrix]) -> list[BoundedTensor]:
    """Spec-row bounds straight from the output box (interval arithmetic)."""
    out = []
    for b in branches:
        w_pos, w_neg = pos_neg_split(b.rows)
        out.append(posneg_bounds(w_pos, w_neg, output_box))
    return out


def run_ibp(graph: NetworkGraph, input_box: BoundedTensor, branches: list[SpecMatrix],
            deadline: Deadline | None = None) -> CrownResult:
    ctx = prepare_analysis(graph, input_box, AnalysisMode.IBP, deadline)
    out_box = graph.nodes[graph.output_id].ibp
    return CrownResult(ibp_branch_bounds(out_box, branches), ctx.passes, True)


def _split_rows(lower: Tensor, upper: Tensor, branches: list[SpecMatrix]) -> list[BoundedTensor]:
    out = []
    at = 0
    for b in branches:
        s = b.rows.shape[0]
        out.append(BoundedTensor(lower[at:at + s], upper[at:at + s]))
        at += s
    return out


def run_crown(graph: NetworkGraph, input_box: BoundedTensor, branches: list[SpecMatrix],
              mode: AnalysisMode = AnalysisMode.CROWN_STANDARD, relax_params=None,
              deadline: Deadline | None = None) -> CrownResult:
    """CROWN analysis over all spec branches.

    Without slope parameters the branches' rows are stacked into a single
    backward pass (rows are independent); with a slope store (per-branch
    parameters) each branch runs its own pass.  On timeout the error
    carries IBP-quality partial bounds.
    """
    if mode not in (AnalysisMode.CROWN_STANDARD, AnalysisMode.CROWN_IBP):
        raise ValueError(f"run_crown expects a CROWN mode, got {mode}")
    if not branches:
        raise ValueError("at least one spec branch required")
    ctx = prepare_analysis(graph, input_box, mode, deadline)
    fallback = ibp_branch_bounds(graph.nodes[graph.output_id].ibp, branches)
    try:
        ensure_pre_activation_bounds(ctx, graph.output_id)
        if relax_params is None:
            a0 = np.vstack([b.rows for b in branches])
            lower, upper = spec_pass(ctx, a0, a0)
            results = _split_rows(lower.value, upper.value, branches)
        else:
            results = []
            for b in branches:
                relax_for = _store_relaxations(ctx, relax_params, b.branch)
                lower, upper = spec_pass(ctx, b.rows, b.rows, relax_for)
                results.append(BoundedTensor(lower.value, upper.value))
        return CrownResult(results, ctx.passes, True)
    except AnalysisTimeout as e:
        raise AnalysisTimeout(str(e) or "analysis timed out", partial=fallback) from None


def _store_relaxations(ctx: AnalysisContext, store, branch: int):
    """Relaxation provider that swaps in learned lower slopes where the
    store has them (store exposes lower_slopes(node, branch, side))."""

    def relax_for(nid: int, side: str) -> ReluRelaxation:
        base = default_relaxation(ctx, nid)
        slopes = store.lower_slopes(nid, branch, side)
        if slopes is None:
            return base
        return ReluRelaxation(base.stability, slopes, base.upper_slope, base.upper_intercept)

    return relax_for
