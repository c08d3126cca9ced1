"""
Round engine
Builds data, clients and the initial model from an ExperimentConfig, runs
synchronous rounds over a transport, evaluates clients and runs the
meta-test on held-out clients.
"""
import logging
import time
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ConfigError, ContractError, DataError, TransportError
from ..models.records import ClientRoundMetrics, MetaClientResult, PhaseTimings, RoundRecord
from ..models.schemas import AttackKind, ExperimentConfig
from ..models.settings import RuntimeSettings
from ..transports.base_transport import BaseTransport
from ..transports.transport_factory import TransportFactory
from .aggregate import AggregatorFactory, BaseAggregator, UpdateSet
from .byzantine import attack_ml
from .client import (
    PHASE_META_HEAD, PHASE_META_NAIVE, ClientState, attack_rng, run_epochs, stream_seed, train_loss,
)
from .data import Dataset, Shard, generate_synthetic, load_bfd1, partition_pathological
from .model import LayerTag, ParamSet, accuracy, build_model, init_head, join, split
from .optim import Optimizer
from .protocols import BaseProtocol, ProtocolFactory

logger = logging.getLogger(__name__)

TRANSFERRED = "transferred"
NAIVE = "naive"


class TrainingResult(NamedTuple):
    records: List[RoundRecord]
    global_params: ParamSet
    clients: List[ClientState]
    initial_params: ParamSet


class Evaluation(NamedTuple):
    accuracies: Dict[int, float]
    mean: float


def build_dataset(cfg: ExperimentConfig, sample_seed: Optional[int] = None) -> Dataset:
    """Synthetic pool for cfg, or the BFD1 file it names"""
    if cfg.data.dataset_path:
        ds = load_bfd1(cfg.data.dataset_path)
        if ds.input_dim != cfg.model.input_dim or ds.num_classes != cfg.model.num_classes:
            raise ConfigError(
                f"dataset {cfg.data.dataset_path} has d={ds.input_dim}, C={ds.num_classes}; "
                f"config expects d={cfg.model.input_dim}, C={cfg.model.num_classes}"
            )
        return ds
    return generate_synthetic(cfg.model.input_dim, cfg.data.k_true, cfg.model.num_classes,
                              cfg.data.num_samples, cfg.data.noise_std, cfg.seed,
                              sample_seed=sample_seed)


def build_shards(cfg: ExperimentConfig, dataset: Dataset) -> List[Shard]:
    """Training shards, with ML poisoning applied once to Byzantine training labels"""
    shards = partition_pathological(dataset, cfg.clients, cfg.data.classes_per_client,
                                    cfg.data.samples_per_class, cfg.data.test_fraction, cfg.seed)
    if cfg.attack.kind != AttackKind.ML:
        return shards
    byzantine = set(cfg.byzantine_ids or ())
    return [
        shard.with_train_labels(attack_ml(shard.train.labels, dataset.num_classes, cfg.attack.mode))
        if shard.client_id in byzantine else shard
        for shard in shards
    ]


def build_meta_shards(cfg: ExperimentConfig) -> List[Shard]:
    """
    Held-out clients drawn from an independent sample of the same task

    With a BFD1 file the rows come from the same file under a different
    partition seed, minus every row the training clients hold.

    Raises:
        DataError: too few unused rows are left for the new clients
    """
    offset_seed = cfg.seed + cfg.meta.sample_seed_offset
    dataset = build_dataset(cfg, sample_seed=offset_seed)
    if cfg.data.dataset_path:
        training = partition_pathological(dataset, cfg.clients, cfg.data.classes_per_client,
                                          cfg.data.samples_per_class, cfg.data.test_fraction, cfg.seed)
        used = np.unique(np.concatenate([np.concatenate([s.train_rows, s.test_rows]) for s in training]))
        dataset = dataset.without_rows(used)
        logger.info(f"Meta-test draws from {dataset.num_rows} rows unused by the {cfg.clients} training clients")
    return partition_pathological(dataset, cfg.meta.new_clients, cfg.data.classes_per_client,
                                  cfg.meta.samples_per_class, cfg.data.test_fraction, offset_seed,
                                  first_client_id=cfg.clients)


def init_clients(cfg: ExperimentConfig, protocol: BaseProtocol, shards: Sequence[Shard],
                 base_model: ParamSet) -> List[ClientState]:
    byzantine = set(cfg.byzantine_ids or ())
    return [
        protocol.init_client(shard.client_id, shard, base_model, cfg, shard.client_id not in byzantine)
        for shard in shards
    ]


class ClientRunner:
    """
    Per-round callable the transport invokes for each client

    Each call touches only its own client's slots, so calls for different
    clients may run concurrently.
    """

    def __init__(self, protocol: BaseProtocol, clients: Sequence[ClientState],
                 cfg: ExperimentConfig, reference: ParamSet):
        self.protocol = protocol
        self.cfg = cfg
        self.reference = reference
        self.clients: List[ClientState] = list(clients)
        self.losses: List[float] = [0.0] * len(self.clients)

    def __call__(self, client_id: int, round_index: int, received: ParamSet) -> ParamSet:
        global_params = self.protocol.restore_upload(received, self.reference)
        state = self.clients[client_id]
        result = self.protocol.local_update(state, global_params, self.cfg, round_index)
        self.clients[client_id] = result.state
        self.losses[client_id] = train_loss(result.local_model, result.state.shard)
        upload = self.protocol.attack(result.upload, result.state, attack_rng(self.cfg, client_id, round_index))
        logger.debug(f"Round {round_index} client {client_id}: loss={self.losses[client_id]:.4f}, "
                     f"honest={state.honest}")
        return upload


def evaluate(clients: Sequence[ClientState], phi: ParamSet, scope: str = "benign",
             protocol: Optional[BaseProtocol] = None) -> Evaluation:
    """
    Test accuracy of every client's model and the mean over the scope

    Args:
        clients: client states
        phi: global parameters (representation, or the full model for FedAvg)
        scope: "benign" averages honest clients only, "all" averages everyone
        protocol: decides each client's model; inferred from phi and the states if omitted

    Raises:
        DataError: a client has an empty test slice
    """
    if scope not in ("benign", "all"):
        raise ConfigError(f"scope must be 'benign' or 'all', got {scope}")

    accuracies = {}
    for state in clients:
        if len(state.shard.test) == 0:
            raise DataError(f"client {state.client_id} has an empty test slice")
        if protocol is not None:
            model = protocol.client_model(state, phi)
        elif phi.has_head():
            model = phi
        elif state.local_shared is not None:
            model = join(state.local_shared, state.head)
        else:
            model = join(phi, state.head)
        accuracies[state.client_id] = accuracy(model, state.shard.test)

    included = [accuracies[s.client_id] for s in clients if scope == "all" or s.honest]
    if not included:
        logger.warning("No clients in evaluation scope; mean accuracy reported as 0")
    mean = float(np.mean(included)) if included else 0.0
    return Evaluation(accuracies, mean)


def run_round(clients: Sequence[ClientState], phi: ParamSet, cfg: ExperimentConfig,
              transport: Optional[BaseTransport], round_index: int = 1,
              protocol: Optional[BaseProtocol] = None,
              aggregator: Optional[BaseAggregator] = None) -> Tuple[List[ClientState], ParamSet, RoundRecord]:
    """
    One synchronous round: broadcast, local updates, gather all n, aggregate, evaluate

    Raises:
        TransportError: any update missing; nothing is aggregated
    """
    protocol = protocol or ProtocolFactory.create(cfg)
    runner = ClientRunner(protocol, clients, cfg, phi)
    round_start = time.perf_counter()
    selected = iterations = converged = None

    if protocol.communicates:
        if transport is None:
            raise ContractError(f"protocol {protocol.name.value} needs a transport")
        exchange = transport.exchange(round_index, phi, runner)
        missing = sorted(set(range(len(clients))) - set(exchange.uploads))
        if missing:
            raise TransportError(f"round {round_index}: no update from clients {missing}")
        updates = UpdateSet([protocol.restore_upload(exchange.uploads[cid], phi)
                             for cid in range(len(clients))])

        aggregator = aggregator or AggregatorFactory.create(cfg)
        agg_start = time.perf_counter()
        result = aggregator.aggregate(updates)
        aggregate_ms = (time.perf_counter() - agg_start) * 1000.0
        new_phi = result.params
        selected, iterations, converged = result.selected, result.iterations, result.converged
        timings = PhaseTimings(broadcast_ms=exchange.broadcast_ms,
                               client_compute_ms=exchange.client_compute_ms,
                               upload_ms=exchange.upload_ms, aggregate_ms=aggregate_ms)
    else:
        compute_start = time.perf_counter()
        for cid in range(len(clients)):
            runner(cid, round_index, phi)
        new_phi, aggregate_ms = phi, 0.0
        timings = PhaseTimings(client_compute_ms=(time.perf_counter() - compute_start) * 1000.0)

    timings = timings.model_copy(update={"round_total_ms": (time.perf_counter() - round_start) * 1000.0})
    clients = runner.clients
    evaluation = evaluate(clients, new_phi, "benign", protocol)
    record = RoundRecord(
        round=round_index,
        clients=[
            ClientRoundMetrics(client_id=s.client_id, benign=s.honest,
                               train_loss=runner.losses[i], test_acc=evaluation.accuracies[s.client_id])
            for i, s in enumerate(clients)
        ],
        mean_benign_acc=evaluation.mean,
        agg_ms=aggregate_ms,
        timings=timings,
        krum_selected=selected,
        gm_iterations=iterations,
        gm_converged=converged,
    )
    logger.info(f"Round {round_index}: mean benign accuracy {evaluation.mean:.4f} "
                f"({timings.round_total_ms:.1f} ms)")
    return clients, new_phi, record


def run_training(cfg: ExperimentConfig, transport: Optional[BaseTransport] = None,
                 settings: Optional[RuntimeSettings] = None) -> TrainingResult:
    """
    Run cfg.rounds synchronous rounds of the configured protocol

    The result depends on cfg alone; the transport only changes timings.
    A transport passed in is opened and closed here.
    """
    cfg = cfg.resolve()
    protocol = ProtocolFactory.create(cfg)
    aggregator = AggregatorFactory.create(cfg) if protocol.communicates else None

    dataset = build_dataset(cfg)
    shards = build_shards(cfg, dataset)
    base_model = build_model(cfg.model.input_dim, cfg.model.hidden_dims, cfg.model.rep_dim,
                             cfg.model.num_classes, cfg.seed)
    phi = initial = protocol.initial_global(base_model)
    clients = init_clients(cfg, protocol, shards, base_model)
    logger.info(f"Starting {protocol.name.value} with {cfg.clients} clients "
                f"({cfg.num_byzantine()} Byzantine, attack={cfg.attack.kind.value}), "
                f"aggregator={cfg.aggregator.value}, rounds={cfg.rounds}")

    records: List[RoundRecord] = []
    if cfg.rounds == 0:
        return TrainingResult(records, phi, clients, initial)

    if not protocol.communicates:
        for t in range(1, cfg.rounds + 1):
            clients, phi, record = run_round(clients, phi, cfg, None, t, protocol, aggregator)
            records.append(record)
        return TrainingResult(records, phi, clients, initial)

    transport = transport or TransportFactory.create(cfg, settings)
    transport.open(cfg.clients)
    try:
        for t in range(1, cfg.rounds + 1):
            clients, phi, record = run_round(clients, phi, cfg, transport, t, protocol, aggregator)
            records.append(record)
    finally:
        transport.close()
    return TrainingResult(records, phi, clients, initial)


def _finetune_curve(model: ParamSet, shard: Shard, cfg: ExperimentConfig, epochs: int,
                    phase: int, tag: Optional[LayerTag]) -> Tuple[ParamSet, List[float]]:
    opt = Optimizer.for_params(model, cfg.lr, cfg.momentum)
    curve = []
    for epoch in range(epochs):
        model, opt = run_epochs(model, opt, shard, cfg.batch_size, 1,
                                stream_seed(cfg.seed, shard.client_id, phase, epoch), tag)
        curve.append(accuracy(model, shard.test))
    return model, curve


def meta_test(phi_frozen: ParamSet, new_shards: Sequence[Shard], epochs: int,
              cfg: ExperimentConfig) -> List[MetaClientResult]:
    """
    Transfer phi_frozen to new clients by training fresh heads only

    Every new client also trains a fresh full model for the same number of
    epochs as the independent-training comparator.

    Raises:
        ContractError: phi_frozen carries head layers or changed during fine-tuning
    """
    if phi_frozen.has_head():
        raise ContractError("meta-test expects a shared-only representation")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")

    results = []
    for shard in new_shards:
        head = init_head(phi_frozen[-1].out_dim, cfg.model.num_classes,
                         stream_seed(cfg.seed, shard.client_id, PHASE_META_HEAD))
        model, curve = _finetune_curve(join(phi_frozen, head), shard, cfg, epochs,
                                       PHASE_META_HEAD, LayerTag.HEAD)
        if not split(model)[0].equals(phi_frozen):
            raise ContractError(f"representation changed while fine-tuning client {shard.client_id}")
        results.append(MetaClientResult(client_id=shard.client_id, method=TRANSFERRED,
                                        test_acc=accuracy(model, shard.test), curve=curve))

        fresh = build_model(phi_frozen[0].in_dim, [layer.out_dim for layer in phi_frozen.layers[:-1]],
                            phi_frozen[-1].out_dim, cfg.model.num_classes,
                            stream_seed(cfg.seed, shard.client_id, PHASE_META_NAIVE))
        fresh, naive_curve = _finetune_curve(fresh, shard, cfg, epochs, PHASE_META_NAIVE, None)
        results.append(MetaClientResult(client_id=shard.client_id, method=NAIVE,
                                        test_acc=accuracy(fresh, shard.test), curve=naive_curve))

    for method in (TRANSFERRED, NAIVE):
        scores = [r.test_acc for r in results if r.method == method]
        if scores:
            logger.info(f"Meta-test {method}: mean accuracy {np.mean(scores):.4f} over {len(scores)} clients")
    return results

