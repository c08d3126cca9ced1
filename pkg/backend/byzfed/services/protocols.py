"""
Training protocols
Each protocol decides what the server broadcasts, how a client trains locally
and what it uploads. BR-MTRL and FedRep share the alternating update and
differ only in the aggregation rule the factory pairs them with.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import replace
from typing import NamedTuple

from ..exceptions import ConfigError
from ..models.schemas import AggregatorName, ExperimentConfig, Protocol
from .client import (
    PHASE_HEAD_INIT, PHASE_JOINT, PHASE_MODEL_INIT, ClientState, client_update,
    client_update_joint, joint_epochs, maybe_attack, run_epochs, stream_seed,
)
from .data import Shard
from .model import ParamSet, build_model, init_head, join, split
from .optim import Optimizer

logger = logging.getLogger(__name__)


class LocalResult(NamedTuple):
    state: ClientState
    upload: ParamSet       # what the client would send before any attack
    local_model: ParamSet  # full model used for the client's training loss


class BaseProtocol(ABC):
    """Abstract base class for training protocols"""

    communicates = True

    @property
    @abstractmethod
    def name(self) -> Protocol:
        pass

    def initial_global(self, base_model: ParamSet) -> ParamSet:
        """What the server holds at round 0"""
        return split(base_model)[0]

    def init_client(self, client_id: int, shard: Shard, base_model: ParamSet,
                    cfg: ExperimentConfig, honest: bool) -> ClientState:
        head = init_head(cfg.model.rep_dim, cfg.model.num_classes,
                         stream_seed(cfg.seed, client_id, PHASE_HEAD_INIT))
        return ClientState(client_id, shard, head, head.zeros_like(), honest, cfg.attack)

    @abstractmethod
    def local_update(self, state: ClientState, global_params: ParamSet,
                     cfg: ExperimentConfig, round_index: int) -> LocalResult:
        pass

    def attack(self, upload: ParamSet, state: ClientState, rng) -> ParamSet:
        return maybe_attack(upload, state, rng)

    def restore_upload(self, upload: ParamSet, global_params: ParamSet) -> ParamSet:
        """Give a decoded upload the layer tags of the global parameters"""
        global_params.check_compatible(upload, "upload")
        return upload.with_tags(global_params.tags)

    def client_model(self, state: ClientState, global_params: ParamSet) -> ParamSet:
        """Full model a client is evaluated with"""
        return join(global_params, state.head)


class AlternatingProtocol(BaseProtocol):
    """Head epochs, then representation epochs; used by br-mtrl and fedrep"""

    def __init__(self, protocol: Protocol = Protocol.BR_MTRL):
        self._name = protocol

    @property
    def name(self) -> Protocol:
        return self._name

    def local_update(self, state, global_params, cfg, round_index):
        state, phi_local = client_update(state, global_params, cfg, round_index)
        return LocalResult(state, phi_local, join(phi_local, state.head))


class FedPerProtocol(BaseProtocol):
    """Joint local epochs, only the representation is shared"""

    name = Protocol.FEDPER

    def local_update(self, state, global_params, cfg, round_index):
        state, phi_local = client_update_joint(state, global_params, cfg, round_index)
        return LocalResult(state, phi_local, join(phi_local, state.head))


class FedAvgProtocol(BaseProtocol):
    """One global model, no personalization"""

    name = Protocol.FEDAVG

    def initial_global(self, base_model: ParamSet) -> ParamSet:
        return base_model

    def local_update(self, state, global_params, cfg, round_index):
        opt = Optimizer.for_params(global_params, cfg.lr, cfg.momentum)
        model, _ = run_epochs(global_params, opt, state.shard, cfg.batch_size, joint_epochs(cfg),
                              stream_seed(cfg.seed, state.client_id, round_index, PHASE_JOINT), None)
        return LocalResult(replace(state, head=split(model)[1]), model, model)

    def attack(self, upload: ParamSet, state: ClientState, rng) -> ParamSet:
        # noise goes on the representation part only
        shared, head = split(upload)
        return join(maybe_attack(shared, state, rng), head)

    def client_model(self, state, global_params):
        return global_params


class NaiveProtocol(BaseProtocol):
    """Every client trains its own full model and never communicates"""

    name = Protocol.NAIVE
    communicates = False

    def init_client(self, client_id, shard, base_model, cfg, honest):
        state = super().init_client(client_id, shard, base_model, cfg, honest)
        own = build_model(cfg.model.input_dim, cfg.model.hidden_dims, cfg.model.rep_dim,
                          cfg.model.num_classes, stream_seed(cfg.seed, client_id, PHASE_MODEL_INIT))
        shared, head = split(own)
        return replace(state, head=head, head_velocity=head.zeros_like(), local_shared=shared)

    def local_update(self, state, global_params, cfg, round_index):
        state, phi_local = client_update_joint(state, state.local_shared, cfg, round_index)
        state = replace(state, local_shared=phi_local)
        return LocalResult(state, phi_local, join(phi_local, state.head))

    def client_model(self, state, global_params):
        return join(state.local_shared, state.head)


class ProtocolFactory:
    """Factory for creating protocol objects"""

    # Registry of available protocols
    _protocols = {
        Protocol.BR_MTRL: lambda: AlternatingProtocol(Protocol.BR_MTRL),
        Protocol.FEDREP: lambda: AlternatingProtocol(Protocol.FEDREP),
        Protocol.FEDPER: FedPerProtocol,
        Protocol.FEDAVG: FedAvgProtocol,
        Protocol.NAIVE: NaiveProtocol,
    }

    @classmethod
    def create(cls, cfg: ExperimentConfig) -> BaseProtocol:
        name = Protocol(cfg.protocol)
        if name not in cls._protocols:
            supported = ", ".join(p.value for p in cls._protocols)
            raise ConfigError(f"Unsupported protocol: {name}. Supported: {supported}")
        if name == Protocol.BR_MTRL and cfg.resolved_aggregator() == AggregatorName.MEAN:
            logger.warning("br-mtrl with mean aggregation is equivalent to fedrep")
        protocol = cls._protocols[name]()
        logger.info(f"Created {protocol.__class__.__name__} for protocol={name.value}")
        return protocol
