"""
Metric sinks
CSV tables, the run manifest and the phi.bin artifact. Every file is written
to a temporary sibling first and renamed into place.
"""
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd

from ..exceptions import ContractError, ProtocolError
from ..models.records import MetaClientResult, PhaseTimings, RoundRecord, RunManifest
from ..models.schemas import WireDtype
from ..transports.wire import Message, MessageKind, decode, encode
from .model import LayerTag, ParamSet

logger = logging.getLogger(__name__)

ROUNDS_COLUMNS = ["round", "client_id", "benign", "train_loss", "test_acc"]
SUMMARY_COLUMNS = ["round", "mean_benign_acc", "agg_ms"]
META_COLUMNS = ["client_id", "method", "test_acc"]
META_CURVE_COLUMNS = ["client_id", "method", "epoch", "test_acc"]
TIMING_COLUMNS = ["mode", "broadcast_ms", "client_compute_ms", "upload_ms", "aggregate_ms", "round_total_ms"]


def write_atomic(path: Path, data: bytes):
    """Write data to path via a temporary file in the same directory"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")


def _write_frame(path: Path, df: pd.DataFrame):
    write_atomic(path, df.to_csv(index=False, lineterminator="\n").encode("utf-8"))


def rounds_frame(records: Sequence[RoundRecord]) -> pd.DataFrame:
    rows = [
        {"round": r.round, "client_id": c.client_id, "benign": int(c.benign),
         "train_loss": c.train_loss, "test_acc": c.test_acc}
        for r in records for c in r.clients
    ]
    return pd.DataFrame(rows, columns=ROUNDS_COLUMNS)


def summary_frame(records: Sequence[RoundRecord], wall_clock: bool = False) -> pd.DataFrame:
    """Per-round summary; agg_ms is 0.0 unless wall_clock is set"""
    rows = [
        {"round": r.round, "mean_benign_acc": r.mean_benign_acc,
         "agg_ms": r.agg_ms if wall_clock else 0.0}
        for r in records
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_rounds(path: Path, records: Sequence[RoundRecord]):
    _write_frame(path, rounds_frame(records))


def write_summary(path: Path, records: Sequence[RoundRecord], wall_clock: bool = False):
    _write_frame(path, summary_frame(records, wall_clock))


def write_meta(path: Path, curve_path: Path, results: Sequence[MetaClientResult]):
    _write_frame(path, pd.DataFrame(
        [{"client_id": r.client_id, "method": r.method, "test_acc": r.test_acc} for r in results],
        columns=META_COLUMNS,
    ))
    _write_frame(curve_path, pd.DataFrame(
        [{"client_id": r.client_id, "method": r.method, "epoch": epoch + 1, "test_acc": acc}
         for r in results for epoch, acc in enumerate(r.curve)],
        columns=META_CURVE_COLUMNS,
    ))


def write_timing(path: Path, timings: Dict[str, PhaseTimings]):
    _write_frame(path, pd.DataFrame(
        [{"mode": mode, **t.model_dump()} for mode, t in timings.items()],
        columns=TIMING_COLUMNS,
    ))


def write_manifest(path: Path, manifest: RunManifest):
    write_atomic(path, (json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n").encode("utf-8"))


def round_diagnostics(records: Sequence[RoundRecord]) -> List[Dict]:
    """Per-round aggregation diagnostics and timings for the manifest"""
    return [
        {"round": r.round, "krum_selected": r.krum_selected, "gm_iterations": r.gm_iterations,
         "gm_converged": r.gm_converged, "timings": r.timings.model_dump()}
        for r in records
    ]


def save_phi(path: Path, phi: ParamSet):
    """Persist a shared representation as one f64 wire frame"""
    if phi.has_head():
        raise ContractError("phi.bin holds the shared representation only")
    write_atomic(path, encode(Message(MessageKind.UPDATE, 0, 0, phi, WireDtype.F64)))


def load_phi(path: Path) -> ParamSet:
    """
    Read a representation written by save_phi

    Raises:
        ProtocolError: the file is not a valid frame or carries no layers
        FileNotFoundError: missing file
    """
    msg = decode(Path(path).read_bytes())
    if msg.payload is None:
        raise ProtocolError(f"{path} carries no layers")
    return msg.payload.with_tags([LayerTag.SHARED] * len(msg.payload))
