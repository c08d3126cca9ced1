"""
Transport factory
Creates the configured round transport
"""
import logging
from typing import Optional

from ..exceptions import ConfigError
from ..models.schemas import ExperimentConfig, TransportMode
from ..models.settings import RuntimeSettings, get_settings
from .base_transport import BaseTransport
from .sequential_transport import SequentialTransport
from .socket_transport import SocketTransport

logger = logging.getLogger(__name__)


class TransportFactory:
    """Factory for creating transports from configuration"""

    # Registry of available transports
    _transports = {
        TransportMode.SEQUENTIAL: SequentialTransport,
        TransportMode.PARALLEL: SocketTransport,
    }

    @classmethod
    def create(cls, cfg: ExperimentConfig, settings: Optional[RuntimeSettings] = None) -> BaseTransport:
        mode = TransportMode(cfg.transport.mode)
        if mode not in cls._transports:
            supported = ", ".join(m.value for m in cls._transports)
            raise ConfigError(f"Unsupported transport: {mode}. Supported: {supported}")

        transport_class = cls._transports[mode]
        if mode == TransportMode.SEQUENTIAL:
            transport = transport_class(cfg.transport.dtype, cfg.transport.compute_delay_ms)
        else:
            settings = settings or get_settings()
            transport = transport_class(
                cfg.transport.dtype,
                cfg.transport.compute_delay_ms,
                host=cfg.transport.host or settings.host,
                port=settings.port if cfg.transport.port is None else cfg.transport.port,
                timeout_s=cfg.transport.timeout_s or settings.socket_timeout_s,
            )
        logger.info(f"Created {transport}")
        return transport
