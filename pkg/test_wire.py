"""
Tests for the binary wire codec
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

import socket
import struct

import numpy as np
import pytest

from byzfed.exceptions import ProtocolError, TransportError
from byzfed.models.schemas import WireDtype
from byzfed.services.model import Layer, ParamSet
from byzfed.transports.wire import (
    MAX_FRAME_BYTES, Message, MessageKind, decode, encode, read_message, write_message,
)


def _random_params(rng) -> ParamSet:
    widths = [int(w) for w in rng.integers(1, 6, size=int(rng.integers(2, 5)))]
    return ParamSet([
        Layer(rng.standard_normal((out_dim, in_dim)) * 10 ** rng.uniform(-3, 3), rng.standard_normal(out_dim))
        for in_dim, out_dim in zip(widths[:-1], widths[1:])
    ])


def test_random_paramsets_round_trip_exactly_at_f64():
    rng = np.random.default_rng(0)
    for i in range(1000):
        msg = Message(MessageKind.UPDATE, round=i, client_id=i % 17, payload=_random_params(rng),
                      dtype=WireDtype.F64)
        assert decode(encode(msg)) == msg


def test_random_bytes_never_crash_the_decoder():
    rng = np.random.default_rng(1)
    for _ in range(10000):
        raw = rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
        if rng.random() < 0.5 and len(raw) >= 4:
            # a consistent prefix reaches the body parser
            raw = struct.pack("<I", len(raw) - 4) + raw[4:]
        try:
            decoded = decode(raw)
        except ProtocolError:
            continue
        assert isinstance(decoded, Message)


def test_ack_frame_is_eighteen_bytes():
    frame = encode(Message(MessageKind.ACK, round=3, client_id=2))

    assert len(frame) == 18
    assert struct.unpack_from("<I", frame)[0] == 14
    assert decode(frame) == Message(MessageKind.ACK, round=3, client_id=2)


def test_frame_layout_is_little_endian_row_major():
    params = ParamSet([Layer([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0])])
    frame = encode(Message(MessageKind.BROADCAST, round=1, client_id=7, payload=params, dtype=WireDtype.F64))

    assert frame[4] == 0
    assert struct.unpack_from("<IIBI", frame, 5) == (1, 7, 0, 1)
    assert struct.unpack_from("<II", frame, 18) == (2, 2)
    assert struct.unpack_from("<6d", frame, 26) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def test_f32_precision():
    rng = np.random.default_rng(2)
    for _ in range(100):
        params = ParamSet([Layer(rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 4))])
        decoded = decode(encode(Message(MessageKind.UPDATE, payload=params, dtype=WireDtype.F32))).payload
        bound = 2.0 ** -20 * np.max(np.abs(params.flatten()))
        assert np.max(np.abs(decoded.flatten() - params.flatten())) <= bound


@pytest.mark.parametrize("mutate", [
    lambda f: f[:-1],                                # truncated
    lambda f: f + b"\x00",                           # trailing byte
    lambda f: f[:4] + bytes([9]) + f[5:],            # unknown kind
    lambda f: f[:13] + bytes([7]) + f[14:],          # unknown dtype
    lambda f: struct.pack("<I", MAX_FRAME_BYTES + 1) + f[4:],  # oversized
    lambda f: f[:2],                                 # no length prefix
    lambda f: f[:18] + struct.pack("<II", 0, 2) + f[26:],      # zero rows
])
def test_malformed_frames_are_protocol_errors(mutate):
    params = ParamSet([Layer([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0])])
    frame = encode(Message(MessageKind.UPDATE, payload=params, dtype=WireDtype.F64))
    with pytest.raises(ProtocolError):
        decode(mutate(frame))


def test_non_finite_payload_is_a_protocol_error():
    params = ParamSet([Layer([[1.0]], [2.0])])
    frame = bytearray(encode(Message(MessageKind.UPDATE, payload=params, dtype=WireDtype.F64)))
    frame[26:34] = struct.pack("<d", float("nan"))
    with pytest.raises(ProtocolError):
        decode(bytes(frame))


def test_out_of_range_header_is_rejected():
    with pytest.raises(ProtocolError):
        encode(Message(MessageKind.ACK, round=2 ** 32))


def test_socket_helpers():
    left, right = socket.socketpair()
    try:
        params = ParamSet([Layer([[1.5]], [0.5])])
        write_message(left, Message(MessageKind.UPDATE, 4, 1, params, WireDtype.F64))
        assert read_message(right) == Message(MessageKind.UPDATE, 4, 1, params, WireDtype.F64)
        left.close()
        with pytest.raises(TransportError):
            read_message(right)
    finally:
        right.close()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
