"""
Pydantic models for run metrics and manifests
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class PhaseTimings(BaseModel):
    """Wall-clock cost of one round, split by protocol phase (milliseconds)"""
    broadcast_ms: float = Field(0.0, ge=0.0)
    client_compute_ms: float = Field(0.0, ge=0.0)
    upload_ms: float = Field(0.0, ge=0.0)
    aggregate_ms: float = Field(0.0, ge=0.0)
    round_total_ms: float = Field(0.0, ge=0.0)

    @classmethod
    def mean(cls, timings: List["PhaseTimings"]) -> "PhaseTimings":
        """Average of several rounds; zero timings for an empty list"""
        if not timings:
            return cls()
        fields = cls.model_fields.keys()
        return cls(**{
            name: sum(getattr(t, name) for t in timings) / len(timings)
            for name in fields
        })


class ClientRoundMetrics(BaseModel):
    """One client's numbers for one round"""
    client_id: int
    benign: bool
    train_loss: float = Field(..., ge=0.0)
    test_acc: float = Field(..., ge=0.0, le=1.0)


class RoundRecord(BaseModel):
    """Everything measured in one synchronous round"""
    round: int = Field(..., ge=1)
    clients: List[ClientRoundMetrics]
    mean_benign_acc: float = Field(..., ge=0.0, le=1.0)
    agg_ms: float = Field(0.0, ge=0.0)
    timings: PhaseTimings = Field(default_factory=PhaseTimings)
    krum_selected: Optional[int] = Field(None, description="Client whose update Krum returned")
    gm_iterations: Optional[int] = Field(None, description="Weiszfeld iterations of the slowest layer")
    gm_converged: Optional[bool] = None

    def deterministic_view(self) -> Dict[str, Any]:
        """Record contents without wall-clock fields"""
        return self.model_dump(exclude={"agg_ms", "timings"})


class MetaClientResult(BaseModel):
    """Meta-test outcome for one new client and one method"""
    client_id: int
    method: str = Field(..., description="transferred or naive")
    test_acc: float = Field(..., ge=0.0, le=1.0)
    curve: List[float] = Field(default_factory=list, description="Accuracy after each epoch")


class RunManifest(BaseModel):
    """Reproducibility record written next to the CSVs"""
    config: Dict[str, Any] = Field(..., description="Fully resolved ExperimentConfig")
    artifact_version: str
    command: str
    started_at: str
    finished_at: str
    outputs: Dict[str, str] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
