"""
In-process sequential transport
Clients run one after another; messages still go through encode/decode.
"""
import logging
import time

from ..exceptions import ProtocolError
from ..models.schemas import TransportMode
from .base_transport import BaseTransport, ExchangeResult
from .wire import Message, MessageKind, decode, encode

logger = logging.getLogger(__name__)


class SequentialTransport(BaseTransport):
    """Single-threaded reference transport"""

    mode = TransportMode.SEQUENTIAL

    def exchange(self, round_index, global_params, runner) -> ExchangeResult:
        uploads = {}
        broadcast_ms = compute_ms = upload_ms = 0.0

        for client_id in range(self.n_clients):
            start = time.perf_counter()
            received = decode(encode(Message(MessageKind.BROADCAST, round_index, client_id,
                                             global_params, self.dtype)))
            broadcast_ms += (time.perf_counter() - start) * 1000.0

            upload, elapsed = self.run_client(runner, client_id, round_index, received.payload)
            compute_ms += elapsed

            start = time.perf_counter()
            reply = decode(encode(Message(MessageKind.UPDATE, round_index, client_id, upload, self.dtype)))
            upload_ms += (time.perf_counter() - start) * 1000.0
            if reply.payload is None:
                raise ProtocolError(f"client {client_id} sent an empty update")
            uploads[client_id] = reply.payload

        logger.debug(f"Round {round_index}: sequential exchange with {self.n_clients} clients done")
        return ExchangeResult(uploads, broadcast_ms, compute_ms, upload_ms)
