"""
Tests for metric sinks and the phi.bin artifact
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

import pandas as pd
import pytest

from byzfed.exceptions import ContractError, ProtocolError
from byzfed.models.records import ClientRoundMetrics, PhaseTimings, RoundRecord
from byzfed.services import metrics
from byzfed.services.model import LayerTag, build_model, split


def _record(round_index: int) -> RoundRecord:
    return RoundRecord(
        round=round_index,
        clients=[ClientRoundMetrics(client_id=0, benign=True, train_loss=0.5, test_acc=0.75),
                 ClientRoundMetrics(client_id=1, benign=False, train_loss=1.5, test_acc=0.25)],
        mean_benign_acc=0.75,
        agg_ms=3.2,
        timings=PhaseTimings(aggregate_ms=3.2, round_total_ms=10.0),
        gm_iterations=4,
        gm_converged=True,
    )


def test_rounds_and_summary_tables(tmp_path):
    records = [_record(1), _record(2)]
    metrics.write_rounds(tmp_path / "rounds.csv", records)
    metrics.write_summary(tmp_path / "summary.csv", records)

    rounds = pd.read_csv(tmp_path / "rounds.csv")
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert len(rounds) == 4 and list(rounds["benign"]) == [1, 0, 1, 0]
    assert list(summary["agg_ms"]) == [0.0, 0.0]


def test_summary_with_wall_clock_columns():
    frame = metrics.summary_frame([_record(1)], wall_clock=True)
    assert frame["agg_ms"].iloc[0] == 3.2


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "nested" / "file.txt"
    metrics.write_atomic(target, b"one")
    metrics.write_atomic(target, b"two")

    assert target.read_bytes() == b"two"
    assert os.listdir(target.parent) == ["file.txt"]


def test_phi_round_trip(tmp_path):
    phi = split(build_model(6, [5], 3, 4, seed=2))[0]
    metrics.save_phi(tmp_path / "phi.bin", phi)

    loaded = metrics.load_phi(tmp_path / "phi.bin")

    assert loaded.equals(phi)
    assert loaded.tags == (LayerTag.SHARED, LayerTag.SHARED)


def test_phi_file_contract(tmp_path):
    with pytest.raises(ContractError):
        metrics.save_phi(tmp_path / "phi.bin", build_model(6, [], 3, 4, seed=2))

    (tmp_path / "junk.bin").write_bytes(b"\x01\x02\x03")
    with pytest.raises(ProtocolError):
        metrics.load_phi(tmp_path / "junk.bin")


def test_round_diagnostics_carry_timings():
    diagnostics = metrics.round_diagnostics([_record(1)])

    assert diagnostics[0]["gm_iterations"] == 4
    assert diagnostics[0]["timings"]["round_total_ms"] == 10.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
