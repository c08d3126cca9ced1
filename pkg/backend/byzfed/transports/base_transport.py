"""
Base transport interface
Abstract base class that all round transports implement
"""
import logging
import time
from abc import ABC, abstractmethod
from typing import Callable, Dict, NamedTuple

from ..models.schemas import TransportMode, WireDtype
from ..services.model import ParamSet

logger = logging.getLogger(__name__)

# (client_id, round, global params) -> upload
ClientRunnerFn = Callable[[int, int, ParamSet], ParamSet]


class ExchangeResult(NamedTuple):
    uploads: Dict[int, ParamSet]
    broadcast_ms: float
    client_compute_ms: float
    upload_ms: float


class BaseTransport(ABC):
    """
    Moves one round's broadcast to every client and gathers their uploads

    Every message passes through the wire codec in both modes, so the
    precision of the parameters seen by clients and server does not depend
    on the mode.
    """

    def __init__(self, dtype: WireDtype = WireDtype.F32, compute_delay_ms: float = 0.0):
        self.dtype = WireDtype(dtype)
        self.compute_delay_ms = float(compute_delay_ms)
        self.n_clients = 0

    @property
    @abstractmethod
    def mode(self) -> TransportMode:
        pass

    def open(self, n_clients: int):
        """Prepare endpoints for n_clients"""
        self.n_clients = n_clients

    @abstractmethod
    def exchange(self, round_index: int, global_params: ParamSet,
                 runner: ClientRunnerFn) -> ExchangeResult:
        """
        Broadcast global_params for round_index and collect one upload per client

        Raises:
            TransportError: any client failed to deliver its upload
        """
        pass

    def close(self):
        """Release endpoints; safe to call twice"""

    def run_client(self, runner: ClientRunnerFn, client_id: int, round_index: int,
                   global_params: ParamSet):
        """Run one client's local work, plus the configured artificial delay"""
        start = time.perf_counter()
        upload = runner(client_id, round_index, global_params)
        if self.compute_delay_ms > 0:
            time.sleep(self.compute_delay_ms / 1000.0)
        return upload, (time.perf_counter() - start) * 1000.0

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(dtype={self.dtype.value}, clients={self.n_clients})"
