"""
Sequential vs parallel run harness
Runs the same configuration over both transports and compares the results.
"""
import logging
from typing import Optional, Tuple

from ..models.records import PhaseTimings
from ..models.schemas import ExperimentConfig, TransportMode
from ..models.settings import RuntimeSettings
from ..services.engine import TrainingResult, run_training

logger = logging.getLogger(__name__)


def with_transport_mode(cfg: ExperimentConfig, mode: TransportMode) -> ExperimentConfig:
    return cfg.model_copy(update={"transport": cfg.transport.model_copy(update={"mode": mode})})


def _run(cfg: ExperimentConfig, mode: TransportMode,
         settings: Optional[RuntimeSettings]) -> Tuple[TrainingResult, PhaseTimings]:
    result = run_training(with_transport_mode(cfg, mode), settings=settings)
    timings = PhaseTimings.mean([record.timings for record in result.records])
    logger.info(f"{mode.value} run: mean round {timings.round_total_ms:.1f} ms "
                f"(compute {timings.client_compute_ms:.1f} ms)")
    return result, timings


def run_sequential(cfg: ExperimentConfig,
                   settings: Optional[RuntimeSettings] = None) -> Tuple[TrainingResult, PhaseTimings]:
    """Run cfg with clients executed one after another in-process"""
    return _run(cfg, TransportMode.SEQUENTIAL, settings)


def run_parallel(cfg: ExperimentConfig,
                 settings: Optional[RuntimeSettings] = None) -> Tuple[TrainingResult, PhaseTimings]:
    """Run cfg with every client on its own loopback connection"""
    return _run(cfg, TransportMode.PARALLEL, settings)


def results_identical(a: TrainingResult, b: TrainingResult) -> bool:
    """Bitwise equality of final parameters, heads and round records (timings excluded)"""
    if not a.global_params.equals(b.global_params):
        return False
    if len(a.clients) != len(b.clients):
        return False
    if not all(x.head.equals(y.head) for x, y in zip(a.clients, b.clients)):
        return False
    return [r.deterministic_view() for r in a.records] == [r.deterministic_view() for r in b.records]
