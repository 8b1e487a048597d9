"""Reader/writer for the protobuf message subset of ONNX model files.

Implements just enough of the protobuf wire format to decode and encode
ModelProto graphs built from nodes, initializers, and input/output value
infos with static tensor shapes.  No external protobuf runtime involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import OnnxImportError

# TensorProto.DataType values we care about
DT_FLOAT = 1
DT_INT32 = 6
DT_INT64 = 7
DT_DOUBLE = 11

_DT_NAMES = {
    1: "float32", 2: "uint8", 3: "int8", 4: "uint16", 5: "int16", 6: "int32",
    7: "int64", 8: "string", 9: "bool", 10: "float16", 11: "float64",
    12: "uint32", 13: "uint64", 14: "complex64", 15: "complex128", 16: "bfloat16",
}


def data_type_name(dt: int) -> str:
    return _DT_NAMES.get(dt, f"data_type_{dt}")


# ---------------------------------------------------------------------------
# wire-level primitives
# ---------------------------------------------------------------------------

def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxImportError("truncated varint in model file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise OnnxImportError("malformed varint in model file")


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples.

    payload is an int for varints/fixed widths and bytes for
    length-delimited fields.
    """
    pos = 0
    n = len(buf)
    while pos < n:
        tag, pos = _read_varint(buf, pos)
        fno, wt = tag >> 3, tag & 7
        if wt == 0:
            val, pos = _read_varint(buf, pos)
            yield fno, wt, val
        elif wt == 1:
            if pos + 8 > n:
                raise OnnxImportError("truncated fixed64 field")
            yield fno, wt, buf[pos:pos + 8]
            pos += 8
        elif wt == 2:
            size, pos = _read_varint(buf, pos)
            if pos + size > n:
                raise OnnxImportError("truncated length-delimited field")
            yield fno, wt, buf[pos:pos + size]
            pos += size
        elif wt == 5:
            if pos + 4 > n:
                raise OnnxImportError("truncated fixed32 field")
            yield fno, wt, buf[pos:pos + 4]
            pos += 4
        else:
            raise OnnxImportError(f"unsupported protobuf wire type {wt}")


def _packed_varints(payload, wt, signed=True) -> list[int]:
    if wt == 0:
        return [_signed64(payload) if signed else payload]
    out = []
    pos = 0
    while pos < len(payload):
        v, pos = _read_varint(payload, pos)
        out.append(_signed64(v) if signed else v)
    return out


# ---------------------------------------------------------------------------
# decoded message subset
# ---------------------------------------------------------------------------

@dataclass
class PTensor:
    name: str = ""
    dims: list[int] = field(default_factory=list)
    data_type: int = DT_FLOAT
    raw_data: bytes = b""
    float_data: list[float] = field(default_factory=list)
    double_data: list[float] = field(default_factory=list)
    int64_data: list[int] = field(default_factory=list)
    int32_data: list[int] = field(default_factory=list)

    def to_array(self) -> np.ndarray:
        """Numeric payload as a numpy array in the tensor's own dtype."""
        shape = tuple(self.dims)
        count = int(np.prod(shape)) if shape else 1
        if self.data_type == DT_FLOAT:
            data = (np.frombuffer(self.raw_data, dtype="<f4") if self.raw_data
                    else np.asarray(self.float_data, dtype=np.float32))
        elif self.data_type == DT_DOUBLE:
            data = (np.frombuffer(self.raw_data, dtype="<f8") if self.raw_data
                    else np.asarray(self.double_data, dtype=np.float64))
        elif self.data_type == DT_INT64:
            data = (np.frombuffer(self.raw_data, dtype="<i8") if self.raw_data
                    else np.asarray(self.int64_data, dtype=np.int64))
        elif self.data_type == DT_INT32:
            data = (np.frombuffer(self.raw_data, dtype="<i4") if self.raw_data
                    else np.asarray(self.int32_data, dtype=np.int32))
        else:
            raise OnnxImportError(
                f"unsupported data type {data_type_name(self.data_type)} "
                f"for tensor '{self.name}'")
        if data.size != count:
            raise OnnxImportError(
                f"tensor '{self.name}' holds {data.size} values but dims say {count}")
        return data.reshape(shape)


@dataclass
class PAttr:
    name: str = ""
    type: int = 0
    i: int | None = None
    f: float | None = None
    s: bytes | None = None
    t: PTensor | None = None
    ints: list[int] = field(default_factory=list)
    floats: list[float] = field(default_factory=list)


@dataclass
class PNode:
    op_type: str = ""
    name: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attributes: dict[str, PAttr] = field(default_factory=dict)


@dataclass
class PValueInfo:
    name: str = ""
    elem_type: int | None = None
    dims: list[int | None] = field(default_factory=list)  # None = symbolic/unknown


@dataclass
class PGraph:
    name: str = ""
    nodes: list[PNode] = field(default_factory=list)
    initializers: list[PTensor] = field(default_factory=list)
    inputs: list[PValueInfo] = field(default_factory=list)
    outputs: list[PValueInfo] = field(default_factory=list)


@dataclass
class PModel:
    ir_version: int = 0
    opset_version: int | None = None
    graph: PGraph = field(default_factory=PGraph)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def _decode_tensor(buf: bytes) -> PTensor:
    t = PTensor()
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            t.dims.extend(_packed_varints(val, wt))
        elif fno == 2 and wt == 0:
            t.data_type = val
        elif fno == 4:  # float_data, packed or not
            if wt == 5:
                t.float_data.append(struct.unpack("<f", val)[0])
            else:
                t.float_data.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fno == 5:
            t.int32_data.extend(_packed_varints(val, wt))
        elif fno == 7:
            t.int64_data.extend(_packed_varints(val, wt))
        elif fno == 8 and wt == 2:
            t.name = val.decode("utf-8")
        elif fno == 9 and wt == 2:
            t.raw_data = val
        elif fno == 10:
            if wt == 1:
                t.double_data.append(struct.unpack("<d", val)[0])
            else:
                t.double_data.extend(np.frombuffer(val, dtype="<f8").tolist())
    return t


def _decode_attr(buf: bytes) -> PAttr:
    a = PAttr()
    for fno, wt, val in _iter_fields(buf):
        if fno == 1 and wt == 2:
            a.name = val.decode("utf-8")
        elif fno == 2 and wt == 5:
            a.f = struct.unpack("<f", val)[0]
        elif fno == 3 and wt == 0:
            a.i = _signed64(val)
        elif fno == 4 and wt == 2:
            a.s = val
        elif fno == 5 and wt == 2:
            a.t = _decode_tensor(val)
        elif fno == 6:
            if wt == 5:
                a.floats.append(struct.unpack("<f", val)[0])
            else:
                a.floats.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fno == 7:
            a.ints.extend(_packed_varints(val, wt))
        elif fno == 20 and wt == 0:
            a.type = val
    return a


def _decode_node(buf: bytes) -> PNode:
    n = PNode()
    for fno, wt, val in _iter_fields(buf):
        if fno == 1 and wt == 2:
            n.inputs.append(val.decode("utf-8"))
        elif fno == 2 and wt == 2:
            n.outputs.append(val.decode("utf-8"))
        elif fno == 3 and wt == 2:
            n.name = val.decode("utf-8")
        elif fno == 4 and wt == 2:
            n.op_type = val.decode("utf-8")
        elif fno == 5 and wt == 2:
            attr = _decode_attr(val)
            n.attributes[attr.name] = attr
    return n


def _decode_value_info(buf: bytes) -> PValueInfo:
    vi = PValueInfo()
    for fno, wt, val in _iter_fields(buf):
        if fno == 1 and wt == 2:
            vi.name = val.decode("utf-8")
        elif fno == 2 and wt == 2:  # TypeProto
            for f2, w2, v2 in _iter_fields(val):
                if f2 == 1 and w2 == 2:  # tensor_type
                    for f3, w3, v3 in _iter_fields(v2):
                        if f3 == 1 and w3 == 0:
                            vi.elem_type = v3
                        elif f3 == 2 and w3 == 2:  # shape
                            for f4, w4, v4 in _iter_fields(v3):
                                if f4 == 1 and w4 == 2:  # dim
                                    dim_value = None
                                    for f5, w5, v5 in _iter_fields(v4):
                                        if f5 == 1 and w5 == 0:
                                            dim_value = _signed64(v5)
                                    vi.dims.append(dim_value)
    return vi


def _decode_graph(buf: bytes) -> PGraph:
    g = PGraph()
    for fno, wt, val in _iter_fields(buf):
        if fno == 1 and wt == 2:
            g.nodes.append(_decode_node(val))
        elif fno == 2 and wt == 2:
            g.name = val.decode("utf-8")
        elif fno == 5 and wt == 2:
            g.initializers.append(_decode_tensor(val))
        elif fno == 11 and wt == 2:
            g.inputs.append(_decode_value_info(val))
        elif fno == 12 and wt == 2:
            g.outputs.append(_decode_value_info(val))
    return g


def decode_model(data: bytes) -> PModel:
    m = PModel()
    saw_graph = False
    for fno, wt, val in _iter_fields(data):
        if fno == 1 and wt == 0:
            m.ir_version = val
        elif fno == 7 and wt == 2:
            m.graph = _decode_graph(val)
            saw_graph = True
        elif fno == 8 and wt == 2:  # OperatorSetIdProto
            for f2, w2, v2 in _iter_fields(val):
                if f2 == 2 and w2 == 0:
                    m.opset_version = _signed64(v2)
    if not saw_graph:
        raise OnnxImportError("file does not contain an ONNX graph")
    return m


def load_model(path: str) -> PModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise OnnxImportError(f"cannot read model file: {e}") from None
    try:
        return decode_model(data)
    except OnnxImportError:
        raise
    except Exception as e:
        raise OnnxImportError(f"not a readable ONNX model: {e}") from None


# ---------------------------------------------------------------------------
# encoding (synthetic models and round-trip tests)
# ---------------------------------------------------------------------------

def _varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(fno: int, wt: int) -> bytes:
    return _varint((fno << 3) | wt)


def _len_field(fno: int, payload: bytes) -> bytes:
    return _tag(fno, 2) + _varint(len(payload)) + payload


def _str_field(fno: int, s: str) -> bytes:
    return _len_field(fno, s.encode("utf-8"))


def _encode_tensor(t: PTensor) -> bytes:
    out = bytearray()
    for d in t.dims:
        out += _tag(1, 0) + _varint(d)
    out += _tag(2, 0) + _varint(t.data_type)
    if t.name:
        out += _str_field(8, t.name)
    if t.raw_data:
        out += _len_field(9, t.raw_data)
    if t.float_data:
        out += _len_field(4, np.asarray(t.float_data, dtype="<f4").tobytes())
    if t.double_data:
        out += _len_field(10, np.asarray(t.double_data, dtype="<f8").tobytes())
    if t.int64_data:
        out += _len_field(7, b"".join(_varint(v) for v in t.int64_data))
    return bytes(out)


def tensor_from_array(name: str, arr: np.ndarray) -> PTensor:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        dt = DT_FLOAT
        raw = arr.astype("<f4").tobytes()
    elif arr.dtype == np.float64:
        dt = DT_DOUBLE
        raw = arr.astype("<f8").tobytes()
    elif arr.dtype == np.int64:
        dt = DT_INT64
        raw = arr.astype("<i8").tobytes()
    else:
        raise ValueError(f"unsupported array dtype {arr.dtype}")
    return PTensor(name=name, dims=list(arr.shape), data_type=dt, raw_data=raw)


def _encode_attr(a: PAttr) -> bytes:
    out = bytearray(_str_field(1, a.name))
    if a.i is not None:
        out += _tag(3, 0) + _varint(a.i)
        out += _tag(20, 0) + _varint(2)  # AttributeProto.INT
    elif a.f is not None:
        out += _tag(2, 5) + struct.pack("<f", a.f)
        out += _tag(20, 0) + _varint(1)  # FLOAT
    elif a.t is not None:
        out += _len_field(5, _encode_tensor(a.t))
        out += _tag(20, 0) + _varint(4)  # TENSOR
    elif a.ints:
        out += b"".join(_tag(7, 0) + _varint(v) for v in a.ints)
        out += _tag(20, 0) + _varint(7)  # INTS
    return bytes(out)


def _encode_node(n: PNode) -> bytes:
    out = bytearray()
    for s in n.inputs:
        out += _str_field(1, s)
    for s in n.outputs:
        out += _str_field(2, s)
    if n.name:
        out += _str_field(3, n.name)
    out += _str_field(4, n.op_type)
    for a in n.attributes.values():
        out += _len_field(5, _encode_attr(a))
    return bytes(out)


def _encode_value_info(vi: PValueInfo) -> bytes:
    dims = bytearray()
    for d in vi.dims:
        if d is None:
            dims += _len_field(1, _str_field(2, "N"))  # symbolic dim_param
        else:
            dims += _len_field(1, _tag(1, 0) + _varint(d))
    shape = _len_field(2, bytes(dims))
    tensor_type = _tag(1, 0) + _varint(vi.elem_type or DT_FLOAT) + shape
    type_proto = _len_field(1, tensor_type)
    return _str_field(1, vi.name) + _len_field(2, type_proto)


def encode_model(m: PModel) -> bytes:
    g = bytearray()
    for n in m.graph.nodes:
        g += _len_field(1, _encode_node(n))
    if m.graph.name:
        g += _str_field(2, m.graph.name)
    for t in m.graph.initializers:
        g += _len_field(5, _encode_tensor(t))
    for vi in m.graph.inputs:
        g += _len_field(11, _encode_value_info(vi))
    for vi in m.graph.outputs:
        g += _len_field(12, _encode_value_info(vi))
    out = bytearray()
    out += _tag(1, 0) + _varint(m.ir_version or 8)
    opset = _tag(2, 0) + _varint(m.opset_version or 13)
    out += _len_field(8, opset)
    out += _len_field(7, bytes(g))
    return bytes(out)


def save_model(m: PModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(m))
