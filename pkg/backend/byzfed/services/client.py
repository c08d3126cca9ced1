"""
Client-side state and local training loops

Every random stream a client consumes is derived from (master seed, client
id, round, phase, epoch), never from scheduling order, so a run is the same
whether clients execute one after another or in parallel.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from ..models.schemas import AttackKind, AttackSpec, ExperimentConfig
from .byzantine import attack_sr
from .data import Shard, minibatches
from .model import LayerTag, ParamSet, forward_loss_grad, join, split
from .optim import Optimizer, step_partial, velocity_part

logger = logging.getLogger(__name__)

# Stream identifiers mixed into seeds
PHASE_HEAD = 1
PHASE_REP = 2
PHASE_JOINT = 3
PHASE_ATTACK = 4
PHASE_HEAD_INIT = 5
PHASE_MODEL_INIT = 6
PHASE_META_HEAD = 7
PHASE_META_NAIVE = 8


def stream_seed(seed: int, *keys: int) -> List[int]:
    """Seed sequence entropy for one independent stream"""
    return [int(seed), *(int(k) for k in keys)]


@dataclass(frozen=True)
class ClientState:
    """One client's shard, personalized head and optimizer memory"""
    client_id: int
    shard: Shard
    head: ParamSet
    head_velocity: ParamSet
    honest: bool = True
    attack: AttackSpec = field(default_factory=AttackSpec)
    local_shared: Optional[ParamSet] = None  # only for clients that never communicate


def run_epochs(model: ParamSet, opt: Optimizer, shard: Shard, batch_size: int, epochs: int,
               seed_keys: List[int], tag: Optional[LayerTag]) -> Tuple[ParamSet, Optimizer]:
    """
    SGD-momentum epochs over the shard, updating only layers with tag (None = all)
    """
    for epoch in range(epochs):
        for batch in minibatches(shard, batch_size, [*seed_keys, epoch]):
            loss_grad = forward_loss_grad(model, batch)
            model, opt = step_partial(model, loss_grad.grads, opt, tag)
    return model, opt


def client_update(state: ClientState, phi_global: ParamSet, cfg: ExperimentConfig,
                  round_index: int = 1) -> Tuple[ClientState, ParamSet]:
    """
    Alternating local update

    1. tau_h head-only epochs starting from the persisted head, phi_global frozen.
    2. phi_i <- phi_global, then tau_phi representation-only epochs with the new head frozen.

    The representation velocity starts from zero every round; the head
    velocity carries over between rounds.

    Returns:
        (updated state, phi_local)
    """
    cid = state.client_id
    model = join(phi_global, state.head)
    opt = Optimizer(cfg.lr, cfg.momentum, join(phi_global.zeros_like(), state.head_velocity))

    model, opt = run_epochs(model, opt, state.shard, cfg.batch_size, cfg.tau_h,
                            stream_seed(cfg.seed, cid, round_index, PHASE_HEAD), LayerTag.HEAD)
    head_velocity = velocity_part(opt, LayerTag.HEAD)

    opt = opt.with_velocity(join(phi_global.zeros_like(), head_velocity))
    model, opt = run_epochs(model, opt, state.shard, cfg.batch_size, cfg.tau_phi,
                            stream_seed(cfg.seed, cid, round_index, PHASE_REP), LayerTag.SHARED)

    phi_local, head = split(model)
    return replace(state, head=head, head_velocity=head_velocity), phi_local


def client_update_joint(state: ClientState, phi_global: ParamSet, cfg: ExperimentConfig,
                        round_index: int = 1) -> Tuple[ClientState, ParamSet]:
    """
    Simultaneous local update: every minibatch steps head and representation together

    Returns:
        (updated state, phi_local)
    """
    model = join(phi_global, state.head)
    opt = Optimizer(cfg.lr, cfg.momentum, join(phi_global.zeros_like(), state.head_velocity))
    model, opt = run_epochs(model, opt, state.shard, cfg.batch_size, joint_epochs(cfg),
                            stream_seed(cfg.seed, state.client_id, round_index, PHASE_JOINT), None)
    phi_local, head = split(model)
    return replace(state, head=head, head_velocity=velocity_part(opt, LayerTag.HEAD)), phi_local


def joint_epochs(cfg: ExperimentConfig) -> int:
    return cfg.tau_h if cfg.local_epochs is None else cfg.local_epochs


def attack_rng(cfg: ExperimentConfig, client_id: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(
        stream_seed(cfg.seed, client_id, round_index, PHASE_ATTACK, cfg.attack.seed)
    )


def maybe_attack(phi_local: ParamSet, state: ClientState, rng: np.random.Generator) -> ParamSet:
    """
    Apply the client's attack to its outgoing representation

    SR clients add scaled noise; ML clients already trained on poisoned
    labels and send phi_local as is; honest clients pass through.
    """
    if state.honest or state.attack.kind != AttackKind.SR:
        return phi_local
    return attack_sr(phi_local, state.attack.sigma, rng)


def train_loss(model: ParamSet, shard: Shard) -> float:
    """Cross-entropy of model over the whole training slice"""
    if len(shard.train) == 0:
        return 0.0
    return forward_loss_grad(model, shard.train).loss
