"""
Round transports: wire codec plus sequential and socket implementations
"""
from .base_transport import BaseTransport, ExchangeResult
from .sequential_transport import SequentialTransport
from .socket_transport import SocketTransport
from .transport_factory import TransportFactory
from .wire import Message, MessageKind, decode, encode

__all__ = [
    "BaseTransport", "ExchangeResult", "SequentialTransport", "SocketTransport",
    "TransportFactory", "Message", "MessageKind", "decode", "encode",
]
