"""
Exception hierarchy shared by every ByzFed module
"""


class ByzFedError(Exception):
    """Base class for all harness errors"""


class ConfigError(ByzFedError, ValueError):
    """Invalid experiment or runtime configuration"""


class ShapeError(ByzFedError, ValueError):
    """Parameter or batch shapes do not compose"""

    def __init__(self, message: str, layer: int = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class DataError(ByzFedError, ValueError):
    """Dataset, shard or label problem"""


class ContractError(ByzFedError, ValueError):
    """An operation was called outside its documented contract"""


class ProtocolError(ByzFedError, ValueError):
    """Malformed or unexpected wire frame"""


class TransportError(ByzFedError):
    """Socket, peer or synchronisation failure during a round"""
