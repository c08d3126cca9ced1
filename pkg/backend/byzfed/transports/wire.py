"""
Binary wire codec for round messages

Frame layout (all integers little-endian):
    u32 length of the rest | u8 kind | u32 round | u32 client_id | u8 dtype
    | u32 layer_count | per layer: u32 rows, u32 cols, rows*cols weights, rows biases

Weights are row-major; dtype 0 is f64 and 1 is f32. Every malformed frame is
rejected with ProtocolError, never a partially built message.
"""
import logging
import socket
import struct
from enum import IntEnum
from typing import Optional

import numpy as np

from ..exceptions import ProtocolError, TransportError
from ..models.schemas import WireDtype
from ..services.model import Layer, LayerTag, ParamSet

logger = logging.getLogger(__name__)

MAX_FRAME_BYTES = 1 << 28

_PREFIX = struct.Struct("<I")
_HEADER = struct.Struct("<BIIBI")
_DIMS = struct.Struct("<II")
_U32_MAX = 0xFFFFFFFF

_DTYPE_CODES = {WireDtype.F64: 0, WireDtype.F32: 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {WireDtype.F64: np.dtype("<f8"), WireDtype.F32: np.dtype("<f4")}


class MessageKind(IntEnum):
    BROADCAST = 0
    UPDATE = 1
    ACK = 2
    SHUTDOWN = 3


class Message:
    """One framed message; payload is None for control messages"""

    __slots__ = ("kind", "round", "client_id", "payload", "dtype")

    def __init__(self, kind: MessageKind, round: int = 0, client_id: int = 0,
                 payload: Optional[ParamSet] = None, dtype: WireDtype = WireDtype.F64):
        self.kind = MessageKind(kind)
        self.round = int(round)
        self.client_id = int(client_id)
        self.payload = payload
        self.dtype = WireDtype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Message):
            return NotImplemented
        if (self.kind, self.round, self.client_id, self.dtype) != \
                (other.kind, other.round, other.client_id, other.dtype):
            return False
        if self.payload is None or other.payload is None:
            return self.payload is None and other.payload is None
        return self.payload.equals(other.payload)

    def __repr__(self) -> str:
        layers = 0 if self.payload is None else len(self.payload)
        return (f"Message({self.kind.name}, round={self.round}, client={self.client_id}, "
                f"dtype={self.dtype.value}, layers={layers})")


def encode(msg: Message) -> bytes:
    """
    Serialize a message into one length-prefixed frame

    Raises:
        ProtocolError: round or client id outside u32
    """
    for name, value in (("round", msg.round), ("client_id", msg.client_id)):
        if not 0 <= value <= _U32_MAX:
            raise ProtocolError(f"{name}={value} does not fit in u32")

    dtype = _NUMPY_DTYPES[msg.dtype]
    layers = () if msg.payload is None else msg.payload.layers
    parts = [_HEADER.pack(int(msg.kind), msg.round, msg.client_id, _DTYPE_CODES[msg.dtype], len(layers))]
    for layer in layers:
        parts.append(_DIMS.pack(layer.out_dim, layer.in_dim))
        parts.append(np.ascontiguousarray(layer.weight, dtype=dtype).tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype=dtype).tobytes())

    body = b"".join(parts)
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds the {MAX_FRAME_BYTES} byte limit")
    return _PREFIX.pack(len(body)) + body


def decode(frame: bytes) -> Message:
    """
    Parse one complete frame (length prefix included)

    Decoded layers are all tagged shared; the receiver restores tags.

    Raises:
        ProtocolError: truncated, oversized, trailing bytes or invalid contents
    """
    frame = bytes(frame)
    if len(frame) < _PREFIX.size:
        raise ProtocolError("truncated length prefix")
    (declared,) = _PREFIX.unpack_from(frame)
    if declared > MAX_FRAME_BYTES:
        raise ProtocolError(f"declared length {declared} exceeds the {MAX_FRAME_BYTES} byte limit")
    actual = len(frame) - _PREFIX.size
    if actual < declared:
        raise ProtocolError(f"truncated frame: {actual} of {declared} bytes")
    if actual > declared:
        raise ProtocolError(f"{actual - declared} trailing bytes after frame")
    return decode_body(frame[_PREFIX.size:])


def decode_body(body: bytes) -> Message:
    """Parse the frame contents that follow the length prefix"""
    try:
        return _decode_body(body)
    except ProtocolError:
        raise
    except (struct.error, ValueError) as e:
        raise ProtocolError(f"invalid frame: {e}") from e


def _decode_body(body: bytes) -> Message:
    if len(body) < _HEADER.size:
        raise ProtocolError(f"truncated header: {len(body)} bytes")
    kind, round_index, client_id, dtype_code, layer_count = _HEADER.unpack_from(body)
    if kind not in MessageKind._value2member_map_:
        raise ProtocolError(f"unknown message kind {kind}")
    if dtype_code not in _CODE_DTYPES:
        raise ProtocolError(f"unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]
    itemsize = _NUMPY_DTYPES[dtype].itemsize

    offset = _HEADER.size
    layers = []
    for i in range(layer_count):
        if len(body) - offset < _DIMS.size:
            raise ProtocolError(f"truncated dimensions of layer {i}")
        rows, cols = _DIMS.unpack_from(body, offset)
        offset += _DIMS.size
        if rows == 0 or cols == 0:
            raise ProtocolError(f"layer {i} has a zero dimension ({rows}x{cols})")
        needed = (rows * cols + rows) * itemsize
        if len(body) - offset < needed:
            raise ProtocolError(f"truncated values of layer {i}")
        values = np.frombuffer(body, dtype=_NUMPY_DTYPES[dtype], count=rows * cols + rows, offset=offset)
        offset += needed
        values = values.astype(np.float64)
        layers.append(Layer(values[:rows * cols].reshape(rows, cols), values[rows * cols:], LayerTag.SHARED))

    if offset != len(body):
        raise ProtocolError(f"{len(body) - offset} trailing bytes after layer data")

    payload = ParamSet(layers) if layers else None
    return Message(MessageKind(kind), round_index, client_id, payload, dtype)


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks, remaining = [], size
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise TransportError(f"peer closed the connection with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> Message:
    """
    Read one frame from a stream socket

    Raises:
        TransportError: connection closed or timed out
        ProtocolError: malformed frame
    """
    try:
        prefix = _recv_exact(sock, _PREFIX.size)
        (declared,) = _PREFIX.unpack(prefix)
        if declared > MAX_FRAME_BYTES:
            raise ProtocolError(f"declared length {declared} exceeds the {MAX_FRAME_BYTES} byte limit")
        body = _recv_exact(sock, declared)
    except socket.timeout as e:
        raise TransportError("timed out waiting for a frame") from e
    except OSError as e:
        raise TransportError(f"socket error while reading: {e}") from e
    return decode_body(body)


def write_message(sock: socket.socket, msg: Message):
    try:
        sock.sendall(encode(msg))
    except socket.timeout as e:
        raise TransportError("timed out sending a frame") from e
    except OSError as e:
        raise TransportError(f"socket error while writing: {e}") from e
