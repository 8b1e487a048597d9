"""Convert ONNX model files into NetworkGraph form.

Pipeline: decode the protobuf, fold operators whose inputs are all
constants, run multi-pass shape inference over tensor names, classify
each remaining operator input as activation or constant, then emit
GraphNode records.  Integer tensors are accepted only as reshape-target
plumbing; everything numeric is widened to float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import onnx_proto
from .errors import GraphError, OnnxImportError, UnsupportedOperatorError
from .graph import GraphNode, InputRole, NetworkGraph, NodeKind
from .tensors import as_tensor

SUPPORTED_OPS = ("Gemm", "MatMul", "Add", "Sub", "Relu", "Flatten", "Reshape", "Constant")

# operator -> acceptable input counts
_ARITY = {
    "Gemm": (2, 3),
    "MatMul": (2,),
    "Add": (2,),
    "Sub": (2,),
    "Relu": (1,),
    "Flatten": (1,),
    "Reshape": (2,),
    "Constant": (0,),
}

_KIND_BY_OP = {
    "Gemm": NodeKind.GEMM,
    "MatMul": NodeKind.MATMUL,
    "Add": NodeKind.ADD,
    "Sub": NodeKind.SUB,
    "Relu": NodeKind.RELU,
    "Flatten": NodeKind.FLATTEN,
    "Reshape": NodeKind.RESHAPE,
}

ShapeTable = dict[str, tuple[int, ...]]


@dataclass
class RawOperator:
    """One ONNX node before graph construction."""

    op_type: str
    name: str
    inputs: list[str]
    outputs: list[str]
    attributes: dict = field(default_factory=dict)


def _attr_int(op: RawOperator, name: str, default: int) -> int:
    v = op.attributes.get(name, default)
    if not isinstance(v, (int, np.integer)):
        raise OnnxImportError(f"{op.op_type} attribute '{name}' must be an integer")
    return int(v)


def _attr_float(op: RawOperator, name: str, default: float) -> float:
    v = op.attributes.get(name, default)
    if not isinstance(v, (int, float, np.floating)):
        raise OnnxImportError(f"{op.op_type} attribute '{name}' must be numeric")
    return float(v)


def _decode_array(t: onnx_proto.PTensor) -> np.ndarray:
    """Tensor payload widened to float64, or int64 for integer shapes."""
    arr = t.to_array()
    if arr.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(arr, dtype=np.float64)
    if arr.dtype in (np.int32, np.int64):
        return np.ascontiguousarray(arr, dtype=np.int64)
    raise OnnxImportError(
        f"unsupported data type {onnx_proto.data_type_name(t.data_type)} "
        f"for tensor '{t.name}'")


def _require_float(name: str, arr: np.ndarray, context: str) -> np.ndarray:
    if arr.dtype != np.float64:
        raise OnnxImportError(
            f"unsupported data type {arr.dtype} for tensor '{name}' used as {context}")
    return arr


def _attr_payload(a: onnx_proto.PAttr):
    if a.t is not None:
        return _decode_array(a.t)
    if a.i is not None:
        return a.i
    if a.f is not None:
        return a.f
    if a.ints:
        return list(a.ints)
    if a.s is not None:
        return a.s.decode("utf-8", errors="replace")
    return None


def _raw_operators(pgraph: onnx_proto.PGraph) -> list[RawOperator]:
    ops = []
    seen_outputs: set[str] = set()
    for pnode in pgraph.nodes:
        op_type = pnode.op_type
        if op_type not in SUPPORTED_OPS:
            raise UnsupportedOperatorError(op_type)
        inputs = list(pnode.inputs)
        while inputs and inputs[-1] == "":  # trailing omitted optional operand
            inputs.pop()
        if len(inputs) not in _ARITY[op_type]:
            want = " or ".join(str(k) for k in _ARITY[op_type])
            raise OnnxImportError(
                f"{op_type} expects {want} inputs, got {len(inputs)}")
        if any(x == "" for x in inputs):
            raise OnnxImportError(f"{op_type} has an empty input slot")
        if len(pnode.outputs) != 1 or not pnode.outputs[0]:
            raise OnnxImportError(f"{op_type} must produce exactly one output")
        out = pnode.outputs[0]
        if out in seen_outputs:
            raise OnnxImportError(f"tensor '{out}' produced more than once")
        seen_outputs.add(out)
        attrs = {name: _attr_payload(a) for name, a in pnode.attributes.items()}
        ops.append(RawOperator(op_type, pnode.name, inputs, [out], attrs))
    return ops


def _normalize_input_shape(vi: onnx_proto.PValueInfo) -> tuple[int, ...]:
    """Static shape for the network input; a symbolic or zero first
    dimension is read as batch size 1."""
    dims: list[int] = []
    for pos, d in enumerate(vi.dims):
        if d is None or d == 0:
            if pos == 0:
                dims.append(1)
                continue
            raise OnnxImportError(
                f"unresolvable shape for input '{vi.name}': "
                f"dimension {pos} is not a fixed size")
        if d < 0:
            raise OnnxImportError(f"input '{vi.name}' has negative dimension {d}")
        dims.append(int(d))
    return tuple(dims)


def _resolve_reshape(in_shape: tuple[int, ...], targets, op: RawOperator) -> tuple[int, ...]:
    if _attr_int(op, "allowzero", 0) != 0:
        raise OnnxImportError("Reshape allowzero=1 unsupported")
    total = int(np.prod(in_shape)) if in_shape else 1
    out: list[int] = []
    infer_at = None
    for i, t in enumerate(int(v) for v in targets):
        if t == 0:
            if i >= len(in_shape):
                raise OnnxImportError(
                    f"Reshape target copies dimension {i} but input has rank {len(in_shape)}")
            out.append(in_shape[i])
        elif t == -1:
            if infer_at is not None:
                raise OnnxImportError("Reshape target has more than one -1")
            infer_at = i
            out.append(1)
        elif t > 0:
            out.append(t)
        else:
            raise OnnxImportError(f"invalid Reshape target dimension {t}")
    partial = int(np.prod(out)) if out else 1
    if infer_at is not None:
        if partial == 0 or total % partial != 0:
            raise OnnxImportError(
                f"reshape element-count mismatch: cannot fill -1 reshaping "
                f"{total} elements into {tuple(out)}")
        out[infer_at] = total // partial
    if int(np.prod(out) if out else 1) != total:
        raise OnnxImportError(
            f"reshape element-count mismatch: {total} elements cannot "
            f"become shape {tuple(out)}")
    return tuple(out)


# ---------------------------------------------------------------------------
# constant folding
# ---------------------------------------------------------------------------

def _constant_op_value(op: RawOperator) -> np.ndarray:
    v = op.attributes.get("value")
    if not isinstance(v, np.ndarray):
        raise OnnxImportError("Constant node without a tensor 'value' attribute")
    return v


def _fold_value(op: RawOperator, known: dict[str, np.ndarray]) -> np.ndarray:
    vals = [known[x] for x in op.inputs]
    t = op.op_type
    if t in ("Gemm", "MatMul", "Add", "Sub", "Relu"):
        vals = [_require_float(n, v, f"{t} operand") for n, v in zip(op.inputs, vals)]
    if t == "Gemm":
        if _attr_int(op, "transA", 0) != 0:
            raise OnnxImportError("Gemm transA unsupported")
        a, b = vals[0], vals[1]
        if _attr_int(op, "transB", 0) != 0:
            b = b.T
        y = _attr_float(op, "alpha", 1.0) * (a @ b)
        if len(vals) == 3:
            y = y + _attr_float(op, "beta", 1.0) * vals[2]
        return y
    if t == "MatMul":
        return vals[0] @ vals[1]
    if t == "Add":
        return vals[0] + vals[1]
    if t == "Sub":
        return vals[0] - vals[1]
    if t == "Relu":
        return np.maximum(vals[0], 0.0)
    if t == "Flatten":
        s = vals[0].shape
        axis = _attr_int(op, "axis", 1)
        if not 0 <= axis <= len(s):
            raise OnnxImportError(f"Flatten axis {axis} out of range for shape {s}")
        return vals[0].reshape(int(np.prod(s[:axis])), int(np.prod(s[axis:])))
    if t == "Reshape":
        target = _resolve_reshape(vals[0].shape, vals[1].reshape(-1), op)
        return vals[0].reshape(target)
    raise OnnxImportError(f"cannot fold operator {t}")


def _fold_constants(ops: list[RawOperator], known: dict[str, np.ndarray]):
    """Evaluate every operator whose inputs are all fixed tensors.

    Returns the surviving operators (order preserved) after extending
    ``known`` with every folded value.
    """
    pending = list(ops)
    while True:
        survivors = []
        changed = False
        for op in pending:
            if op.op_type == "Constant":
                known[op.outputs[0]] = _constant_op_value(op)
                changed = True
            elif all(x in known for x in op.inputs):
                known[op.outputs[0]] = _fold_value(op, known)
                changed = True
            else:
                survivors.append(op)
        pending = survivors
        if not changed:
            return pending


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------

def _gemm_shape(op: RawOperator, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if _attr_int(op, "transA", 0) != 0:
        raise OnnxImportError("Gemm transA unsupported")
    if len(a) > 2 or len(a) == 0:
        raise OnnxImportError(f"Gemm input must be 1-D or 2-D, got {a}")
    if len(b) != 2:
        raise OnnxImportError(f"Gemm weight must be 2-D, got {b}")
    k = a[-1]
    if _attr_int(op, "transB", 0) != 0:
        n, kw = b
    else:
        kw, n = b
    if kw != k:
        raise OnnxImportError(f"Gemm weight {b} does not match input of size {k}")
    return (n,) if len(a) == 1 else (a[0], n)


def _matmul_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if not 1 <= len(a) <= 2 or not 1 <= len(b) <= 2:
        raise OnnxImportError(f"MatMul inputs must be 1-D or 2-D, got {a} and {b}")
    if a[-1 if len(a) == 1 else 1] != b[0]:
        raise OnnxImportError(f"MatMul shapes {a} and {b} do not align")
    if len(a) == 1 and len(b) == 1:
        return ()
    if len(a) == 1:
        return (b[1],)
    if len(b) == 1:
        return (a[0],)
    return (a[0], b[1])


def _broadcast_shape(op: RawOperator, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        out = tuple(int(d) for d in np.broadcast_shapes(a, b))
    except ValueError:
        raise OnnxImportError(f"{op.op_type} cannot broadcast {a} and {b}") from None
    out_size = int(np.prod(out)) if out else 1
    for s in (a, b):
        size = int(np.prod(s)) if s else 1
        if size not in (1, out_size):
            raise OnnxImportError(
                f"{op.op_type} broadcast of {a} and {b} unsupported "
                f"(operands must match element counts or be scalar)")
    return out


def _infer_one(op: RawOperator, shapes: list[tuple[int, ...]],
               known: dict[str, np.ndarray]) -> tuple[int, ...]:
    t = op.op_type
    if t == "Gemm":
        return _gemm_shape(op, shapes[0], shapes[1])
    if t == "MatMul":
        return _matmul_shape(shapes[0], shapes[1])
    if t in ("Add", "Sub"):
        return _broadcast_shape(op, shapes[0], shapes[1])
    if t == "Relu":
        return shapes[0]
    if t == "Flatten":
        s = shapes[0]
        axis = _attr_int(op, "axis", 1)
        if not 0 <= axis <= len(s):
            raise OnnxImportError(f"Flatten axis {axis} out of range for shape {s}")
        return (int(np.prod(s[:axis])), int(np.prod(s[axis:])))
    if t == "Reshape":
        shape_name = op.inputs[1]
        if shape_name not in known:
            raise OnnxImportError("Reshape target shape must be a constant")
        target = known[shape_name]
        if target.dtype != np.int64:
            raise OnnxImportError("Reshape target shape must be an integer tensor")
        return _resolve_reshape(shapes[0], target.reshape(-1), op)
    raise OnnxImportError(f"cannot infer shape for operator {t}")


def _infer_shape_table(ops: list[RawOperator], seed: ShapeTable,
                       known: dict[str, np.ndarray]) -> ShapeTable:
    """Multi-pass propagation until fixpoint; the file's node order is
    not assumed topological."""
    table = dict(seed)
    changed = True
    while changed:
        changed = False
        for op in ops:
            out = op.outputs[0]
            if out in table:
                continue
            shapes = [table.get(x) for x in op.inputs]
            if any(s is None for s in shapes):
                continue
            table[out] = _infer_one(op, shapes, known)
            changed = True
    for op in ops:
        if op.outputs[0] not in table:
            raise OnnxImportError(f"unresolvable shape for tensor '{op.outputs[0]}'")
    return table


# ---------------------------------------------------------------------------
# graph assembly
# ---------------------------------------------------------------------------

def classify_operator_inputs(op: RawOperator, known_constants) -> list[InputRole]:
    """Label each operator input as activation or constant, enforcing the
    one-constant-operand rule for linear products."""
    roles = [InputRole.CONSTANT if x in known_constants else InputRole.ACTIVATION
             for x in op.inputs]
    n_act = sum(r is InputRole.ACTIVATION for r in roles)
    if op.op_type == "MatMul" and n_act == 2:
        raise OnnxImportError("bilinear activation product unsupported")
    if op.op_type == "Gemm":
        if roles[1] is InputRole.ACTIVATION:
            if roles[0] is InputRole.ACTIVATION:
                raise OnnxImportError("bilinear activation product unsupported")
            raise OnnxImportError("Gemm requires its first operand to be the activation")
        if roles[0] is InputRole.CONSTANT:
            raise OnnxImportError("Gemm requires its first operand to be the activation")
        if len(roles) == 3 and roles[2] is InputRole.ACTIVATION:
            raise OnnxImportError("Gemm bias must be a constant")
    if op.op_type == "Reshape" and roles[1] is InputRole.ACTIVATION:
        raise OnnxImportError("Reshape target shape must be a constant")
    return roles


def _gemm_attrs(op: RawOperator, known: dict[str, np.ndarray]) -> dict:
    w = _require_float(op.inputs[1], known[op.inputs[1]], "Gemm weight")
    if w.ndim != 2:
        raise OnnxImportError(f"Gemm weight must be 2-D, got {w.shape}")
    if _attr_int(op, "transB", 0) == 0:
        w = w.T
    weight = _attr_float(op, "alpha", 1.0) * w
    attrs = {"weight": as_tensor(weight)}
    if len(op.inputs) == 3:
        c = _require_float(op.inputs[2], known[op.inputs[2]], "Gemm bias").reshape(-1)
        n = weight.shape[0]
        if c.size == 1 and n != 1:
            c = np.full(n, c[0])
        if c.size != n:
            raise OnnxImportError(f"Gemm bias of size {c.size} does not match {n} outputs")
        attrs["bias"] = as_tensor(_attr_float(op, "beta", 1.0) * c)
    return attrs


def _matmul_attrs(op: RawOperator, roles: list[InputRole],
                  known: dict[str, np.ndarray]) -> tuple[dict, str]:
    """Weight matrix oriented as y = W x, plus the activation operand name."""
    if roles[0] is InputRole.ACTIVATION:
        w = _require_float(op.inputs[1], known[op.inputs[1]], "MatMul weight")
        m = w.T if w.ndim == 2 else w.reshape(1, -1)
        act = op.inputs[0]
    else:
        w = _require_float(op.inputs[0], known[op.inputs[0]], "MatMul weight")
        m = w if w.ndim == 2 else w.reshape(1, -1)
        act = op.inputs[1]
    return {"weight": as_tensor(m)}, act


def _assemble_graph(ops: list[RawOperator], known: dict[str, np.ndarray],
                    table: ShapeTable, input_name: str,
                    input_shape: tuple[int, ...], output_name: str) -> NetworkGraph:
    nodes = [GraphNode(0, NodeKind.INPUT, {}, [], input_shape)]
    name_to_id = {input_name: 0}
    const_ids: dict[str, int] = {}

    def constant_node(name: str) -> int:
        if name not in const_ids:
            arr = _require_float(name, known[name], "elementwise operand")
            nid = len(nodes)
            nodes.append(GraphNode(nid, NodeKind.CONSTANT, {"value": as_tensor(arr)},
                                   [], arr.shape))
            const_ids[name] = nid
        return const_ids[name]

    pending = list(ops)
    while pending:
        survivors = []
        progressed = False
        for op in pending:
            roles = classify_operator_inputs(op, known)
            acts = [x for x, r in zip(op.inputs, roles) if r is InputRole.ACTIVATION]
            if not all(x in name_to_id for x in acts):
                survivors.append(op)
                continue
            out_shape = table[op.outputs[0]]
            kind = _KIND_BY_OP[op.op_type]
            if op.op_type == "Gemm":
                attrs = _gemm_attrs(op, known)
                links = [(name_to_id[op.inputs[0]], InputRole.ACTIVATION)]
            elif op.op_type == "MatMul":
                attrs, act = _matmul_attrs(op, roles, known)
                links = [(name_to_id[act], InputRole.ACTIVATION)]
            elif op.op_type in ("Add", "Sub"):
                attrs = {}
                links = []
                for x, r in zip(op.inputs, roles):
                    if r is InputRole.ACTIVATION:
                        links.append((name_to_id[x], InputRole.ACTIVATION))
                    else:
                        links.append((constant_node(x), InputRole.CONSTANT))
            elif op.op_type == "Relu":
                attrs = {}
                links = [(name_to_id[op.inputs[0]], InputRole.ACTIVATION)]
            elif op.op_type == "Flatten":
                attrs = {"axis": _attr_int(op, "axis", 1)}
                links = [(name_to_id[op.inputs[0]], InputRole.ACTIVATION)]
            else:  # Reshape: the shape operand lives on in the attrs
                attrs = {"shape": out_shape}
                links = [(name_to_id[op.inputs[0]], InputRole.ACTIVATION)]
            nid = len(nodes)
            nodes.append(GraphNode(nid, kind, attrs, links, out_shape))
            name_to_id[op.outputs[0]] = nid
            progressed = True
        pending = survivors
        if pending and not progressed:
            raise OnnxImportError("dependency cycle among operators")

    if output_name in name_to_id:
        output_id = name_to_id[output_name]
    elif output_name in known:
        raise OnnxImportError(f"network output '{output_name}' is a constant")
    else:
        raise OnnxImportError(f"unresolved tensor name '{output_name}'")
    try:
        return NetworkGraph(nodes, 0, output_id)
    except GraphError as e:
        raise OnnxImportError(f"malformed network: {e}") from None


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def _decompose(model: onnx_proto.PModel):
    """Shared front half: raw ops, constants after folding, io names, seed shapes."""
    g = model.graph
    known: dict[str, np.ndarray] = {}
    for t in g.initializers:
        known[t.name] = _decode_array(t)
    net_inputs = [vi for vi in g.inputs if vi.name not in known]
    if len(net_inputs) != 1:
        raise OnnxImportError(
            f"model must have exactly one network input, found {len(net_inputs)}")
    if len(g.outputs) != 1:
        raise OnnxImportError(
            f"model must have exactly one network output, found {len(g.outputs)}")
    vi = net_inputs[0]
    if vi.elem_type not in (None, onnx_proto.DT_FLOAT, onnx_proto.DT_DOUBLE):
        raise OnnxImportError(
            f"unsupported data type {onnx_proto.data_type_name(vi.elem_type)} "
            f"for input '{vi.name}'")
    input_shape = _normalize_input_shape(vi)
    ops = _raw_operators(g)

    producible = set(known) | {vi.name} | {op.outputs[0] for op in ops}
    for op in ops:
        for x in op.inputs:
            if x not in producible:
                raise OnnxImportError(f"unresolved tensor name '{x}'")

    ops = _fold_constants(ops, known)
    seed: ShapeTable = {vi.name: input_shape}
    for name, arr in known.items():
        seed[name] = arr.shape
    return ops, known, seed, vi.name, input_shape, g.outputs[0].name


def infer_shapes(model: onnx_proto.PModel) -> ShapeTable:
    """Shapes for every tensor name in the model, via repeated passes."""
    ops, known, seed, _, _, _ = _decompose(model)
    return _infer_shape_table(ops, seed, known)


def import_model(model: onnx_proto.PModel) -> NetworkGraph:
    ops, known, seed, input_name, input_shape, output_name = _decompose(model)
    table = _infer_shape_table(ops, seed, known)
    return _assemble_graph(ops, known, table, input_name, input_shape, output_name)


def parse_onnx(path: str) -> NetworkGraph:
    """Read an ONNX file and build the NetworkGraph it describes."""
    return import_model(onnx_proto.load_model(path))
