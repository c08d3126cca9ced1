"""
Tests for the sequential and loopback socket transports
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

import socket

import pytest

from byzfed.exceptions import TransportError
from byzfed.models.schemas import ExperimentConfig, TransportMode, WireDtype
from byzfed.models.settings import RuntimeSettings
from byzfed.services.model import Layer, ParamSet
from byzfed.transports.harness import results_identical, run_parallel, run_sequential
from byzfed.transports.sequential_transport import SequentialTransport
from byzfed.transports.socket_transport import SocketTransport
from byzfed.transports.transport_factory import TransportFactory
from byzfed.transports.wire import Message, MessageKind, encode

SETTINGS = RuntimeSettings(host="127.0.0.1", port=0, socket_timeout_s=20.0)


def tiny_config(**updates) -> ExperimentConfig:
    document = {
        "clients": 5,
        "byzantine_count": 1,
        "attack": {"kind": "sr", "sigma": 2.0},
        "rounds": 2,
        "tau_h": 2,
        "model": {"input_dim": 8, "rep_dim": 2, "num_classes": 4},
        "data": {"k_true": 2, "num_samples": 4000, "samples_per_class": 10},
        "transport": {"dtype": "f64", "port": 0},
    }
    document.update(updates)
    return ExperimentConfig(**document)


def echo_runner(client_id, round_index, received):
    return received.map(lambda a: a + client_id)


@pytest.fixture
def params():
    return ParamSet([Layer([[1.0, 2.0]], [0.5])])


@pytest.mark.parametrize("protocol", ["br-mtrl", "fedavg"])
def test_parallel_run_matches_sequential_bitwise(protocol):
    cfg = tiny_config(protocol=protocol)

    sequential, _ = run_sequential(cfg, SETTINGS)
    parallel, _ = run_parallel(cfg, SETTINGS)

    assert results_identical(sequential, parallel)


def test_f32_runs_also_match():
    cfg = tiny_config(transport={"dtype": "f32", "port": 0})

    assert results_identical(run_sequential(cfg, SETTINGS)[0], run_parallel(cfg, SETTINGS)[0])


def test_socket_exchange_gathers_every_client(params):
    transport = SocketTransport(WireDtype.F64, port=0, timeout_s=10.0)
    with transport:
        transport.open(4)
        assert transport.port != 0
        result = transport.exchange(1, params, echo_runner)

    assert sorted(result.uploads) == [0, 1, 2, 3]
    for cid, upload in result.uploads.items():
        assert upload.equals(params.map(lambda a: a + cid))


def test_socket_close_joins_client_threads(params):
    transport = SocketTransport(WireDtype.F64, port=0, timeout_s=10.0)
    transport.open(3)
    transport.exchange(1, params, echo_runner)

    transport.close()
    transport.close()

    assert not any(thread.is_alive() for thread in transport._threads)


def test_failing_client_aborts_the_round(params):
    def runner(client_id, round_index, received):
        if client_id == 1:
            raise RuntimeError("local training blew up")
        return received

    with SocketTransport(WireDtype.F64, port=0, timeout_s=10.0) as transport:
        transport.open(3)
        with pytest.raises(TransportError, match="client 1"):
            transport.exchange(1, params, runner)


def test_sequential_failure_propagates(params):
    def runner(client_id, round_index, received):
        raise RuntimeError("boom")

    transport = SequentialTransport(WireDtype.F64)
    transport.open(2)
    with pytest.raises(RuntimeError):
        transport.exchange(1, params, runner)


def test_port_in_use_is_a_transport_error():
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    try:
        transport = SocketTransport(WireDtype.F64, port=blocker.getsockname()[1], timeout_s=2.0)
        with pytest.raises(TransportError):
            transport.open(2)
    finally:
        blocker.close()


def _impostor_sending(raw: bytes):
    def client_loop(self, client_id):
        with socket.create_connection((self.host, self.port), timeout=5.0) as sock:
            sock.sendall(raw)
    return client_loop


@pytest.mark.parametrize("raw", [
    encode(Message(MessageKind.ACK, 0, 99, dtype=WireDtype.F64)),
    encode(Message(MessageKind.UPDATE, 0, 0, dtype=WireDtype.F64)),
    b"\x02\x00\x00\x00xy",
])
def test_bad_handshake_is_a_transport_error(monkeypatch, raw):
    monkeypatch.setattr(SocketTransport, "_client_loop", _impostor_sending(raw))
    transport = SocketTransport(WireDtype.F64, port=0, timeout_s=5.0)

    with pytest.raises(TransportError, match="handshake"):
        transport.open(1)
    assert transport._connections == {}


def test_exchange_before_open_fails(params):
    with pytest.raises(TransportError):
        SocketTransport(WireDtype.F64).exchange(1, params, echo_runner)


def test_factory_uses_config_then_settings():
    parallel = tiny_config(transport={"mode": "parallel", "dtype": "f64", "port": 0})
    transport = TransportFactory.create(parallel, RuntimeSettings(host="127.0.0.1", port=47611))
    assert isinstance(transport, SocketTransport)
    assert transport.port == 0 and transport.host == "127.0.0.1"

    defaulted = tiny_config(transport={"mode": "parallel"})
    transport = TransportFactory.create(defaulted, RuntimeSettings(port=47611, socket_timeout_s=5.0))
    assert transport.port == 47611 and transport.timeout_s == 5.0

    sequential = TransportFactory.create(tiny_config(), SETTINGS)
    assert sequential.mode == TransportMode.SEQUENTIAL and sequential.dtype == WireDtype.F64


@pytest.mark.slow
def test_parallel_rounds_overlap_client_compute():
    cfg = tiny_config(clients=8, byzantine_count=0, attack={"kind": "none"}, rounds=3,
                      transport={"dtype": "f64", "port": 0, "compute_delay_ms": 50.0})

    sequential, seq_timings = run_sequential(cfg, SETTINGS)
    parallel, par_timings = run_parallel(cfg, SETTINGS)

    assert results_identical(sequential, parallel)
    assert par_timings.round_total_ms < 0.5 * seq_timings.round_total_ms
    assert par_timings.client_compute_ms < seq_timings.client_compute_ms


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
