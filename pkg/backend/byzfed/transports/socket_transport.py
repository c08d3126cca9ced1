"""
Loopback socket transport
The server listens on a TCP port; every client is a daemon thread holding one
persistent connection. A round is a broadcast to all connections followed by
a gather barrier that waits for every update.
"""
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional

from ..exceptions import ProtocolError, TransportError
from ..models.schemas import TransportMode, WireDtype
from .base_transport import BaseTransport, ExchangeResult
from .wire import Message, MessageKind, read_message, write_message

logger = logging.getLogger(__name__)


class SocketTransport(BaseTransport):
    """Parallel transport over loopback TCP"""

    mode = TransportMode.PARALLEL

    def __init__(self, dtype: WireDtype = WireDtype.F32, compute_delay_ms: float = 0.0,
                 host: str = "127.0.0.1", port: int = 0, timeout_s: float = 60.0):
        super().__init__(dtype, compute_delay_ms)
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self._server: Optional[socket.socket] = None
        self._connections: Dict[int, socket.socket] = {}
        self._threads = []
        self._pool: Optional[ThreadPoolExecutor] = None
        self._runner = None
        self._compute_ms: Dict[int, float] = {}
        self._client_errors: Dict[int, BaseException] = {}
        self._lock = threading.Lock()
        self._closed = False

    def open(self, n_clients: int):
        super().open(n_clients)
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server.bind((self.host, self.port))
        except OSError as e:
            server.close()
            raise TransportError(f"cannot listen on {self.host}:{self.port}: {e}") from e
        server.listen(n_clients)
        server.settimeout(self.timeout_s)
        self._server = server
        self.port = server.getsockname()[1]
        logger.info(f"Server listening on {self.host}:{self.port} for {n_clients} clients")

        for client_id in range(n_clients):
            thread = threading.Thread(target=self._client_loop, args=(client_id,),
                                      name=f"byzfed-client-{client_id}", daemon=True)
            thread.start()
            self._threads.append(thread)

        try:
            for _ in range(n_clients):
                conn, _ = server.accept()
                conn.settimeout(self.timeout_s)
                try:
                    hello = read_message(conn)
                except ProtocolError as e:
                    conn.close()
                    raise TransportError(f"malformed handshake: {e}") from e
                if hello.kind != MessageKind.ACK or not 0 <= hello.client_id < n_clients:
                    conn.close()
                    raise TransportError(f"unexpected handshake {hello}")
                self._connections[hello.client_id] = conn
        except socket.timeout as e:
            self.close()
            raise TransportError(f"only {len(self._connections)} of {n_clients} clients connected") from e
        except Exception:
            self.close()
            raise

        self._pool = ThreadPoolExecutor(max_workers=n_clients, thread_name_prefix="byzfed-gather")
        logger.info(f"All {n_clients} clients connected")

    def _client_loop(self, client_id: int):
        sock = None
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
            # idle between rounds while the server aggregates and evaluates
            sock.settimeout(None)
            write_message(sock, Message(MessageKind.ACK, 0, client_id, dtype=self.dtype))
            while True:
                msg = read_message(sock)
                if msg.kind == MessageKind.SHUTDOWN:
                    write_message(sock, Message(MessageKind.ACK, msg.round, client_id, dtype=self.dtype))
                    break
                if msg.kind != MessageKind.BROADCAST or msg.payload is None:
                    raise ProtocolError(f"client {client_id} received unexpected {msg}")
                upload, elapsed = self.run_client(self._runner, client_id, msg.round, msg.payload)
                with self._lock:
                    self._compute_ms[client_id] = elapsed
                write_message(sock, Message(MessageKind.UPDATE, msg.round, client_id, upload, self.dtype))
        except Exception as e:
            with self._lock:
                self._client_errors[client_id] = e
            if not self._closed:
                logger.error(f"Client {client_id} failed: {e}")
        finally:
            if sock is not None:
                sock.close()

    def _gather_one(self, client_id: int, round_index: int):
        conn = self._connections[client_id]
        try:
            msg = read_message(conn)
        except TransportError:
            with self._lock:
                cause = self._client_errors.get(client_id)
            if cause is not None:
                raise TransportError(f"client {client_id} failed in round {round_index}: {cause}") from cause
            raise
        if msg.kind != MessageKind.UPDATE or msg.payload is None:
            raise ProtocolError(f"expected an update from client {client_id}, got {msg}")
        if msg.round != round_index or msg.client_id != client_id:
            raise ProtocolError(
                f"update for round {msg.round} client {msg.client_id} on the connection "
                f"of client {client_id} in round {round_index}"
            )
        return msg.payload

    def exchange(self, round_index, global_params, runner) -> ExchangeResult:
        if self._pool is None:
            raise TransportError("transport is not open")
        self._runner = runner
        self._compute_ms.clear()

        start = time.perf_counter()
        for client_id, conn in sorted(self._connections.items()):
            write_message(conn, Message(MessageKind.BROADCAST, round_index, client_id,
                                        global_params, self.dtype))
        broadcast_ms = (time.perf_counter() - start) * 1000.0

        start = time.perf_counter()
        futures = {cid: self._pool.submit(self._gather_one, cid, round_index)
                   for cid in sorted(self._connections)}
        uploads, failures = {}, []
        for cid, future in futures.items():
            try:
                uploads[cid] = future.result()
            except Exception as e:
                failures.append((cid, e))
        gather_ms = (time.perf_counter() - start) * 1000.0

        if failures:
            cid, error = failures[0]
            logger.error(f"Round {round_index}: {len(failures)} client(s) failed, first was client {cid}")
            raise TransportError(f"round {round_index} incomplete: client {cid}: {error}") from error

        # clients compute concurrently, so the phase costs as much as the slowest one
        compute_ms = max(self._compute_ms.values(), default=0.0)
        return ExchangeResult(uploads, broadcast_ms, compute_ms, max(gather_ms - compute_ms, 0.0))

    def close(self):
        if self._closed:
            return
        self._closed = True
        for client_id, conn in sorted(self._connections.items()):
            try:
                write_message(conn, Message(MessageKind.SHUTDOWN, 0, client_id, dtype=self.dtype))
                ack = read_message(conn)
                if ack.kind != MessageKind.ACK:
                    logger.warning(f"Client {client_id} answered shutdown with {ack}")
            except (TransportError, ProtocolError) as e:
                logger.warning(f"Client {client_id} did not acknowledge shutdown: {e}")
            finally:
                conn.close()
        self._connections.clear()
        for thread in self._threads:
            thread.join(timeout=self.timeout_s)
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        if self._server is not None:
            self._server.close()
        logger.info("Socket transport closed")
