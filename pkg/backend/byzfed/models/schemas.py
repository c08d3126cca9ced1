"""
Pydantic models for experiment configuration
Every protocol knob of a run lives here; CLI flags and presets map onto these fields
"""
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Protocol(str, Enum):
    """Supported training protocols"""
    BR_MTRL = "br-mtrl"
    FEDREP = "fedrep"
    FEDPER = "fedper"
    FEDAVG = "fedavg"
    NAIVE = "naive"


class AggregatorName(str, Enum):
    """Server aggregation rules"""
    MEAN = "mean"
    GM = "gm"
    KRUM = "krum"


class AttackKind(str, Enum):
    """Byzantine behaviours"""
    NONE = "none"
    SR = "sr"    # scaled random noise on the transmitted representation
    ML = "ml"    # mislabeled local training data


class MislabelMode(str, Enum):
    """Label switching rules for the ML attack"""
    CYCLIC_SHIFT = "cyclic-shift"
    PAIRWISE_SWAP = "pairwise-swap"


class WireDtype(str, Enum):
    """Float precision of parameters on the wire"""
    F64 = "f64"
    F32 = "f32"


class TransportMode(str, Enum):
    """How the server reaches its clients"""
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"


def held_out_count(per_class: int, test_fraction: float) -> int:
    """Test rows taken from each class of a shard; at least one row stays for training"""
    return min(int(round(per_class * test_fraction)), per_class - 1)


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class ModelConfig(_StrictModel):
    """Dense split network dimensions"""
    input_dim: int = Field(32, ge=1, description="Input width d")
    hidden_dims: List[int] = Field(default_factory=list, description="Hidden widths of the shared layers")
    rep_dim: int = Field(4, ge=1, description="Representation width k")
    num_classes: int = Field(10, ge=2, description="Number of classes C")

    @model_validator(mode="after")
    def _check_hidden(self):
        for width in self.hidden_dims:
            if width < 1:
                raise ValueError(f"hidden_dims entries must be >= 1, got {width}")
        return self


class DataConfig(_StrictModel):
    """Synthetic task and pathological partition settings"""
    k_true: int = Field(4, ge=1, description="Dimension of the planted shared subspace")
    num_samples: int = Field(20000, ge=1, description="Rows N drawn for the training pool")
    noise_std: float = Field(0.1, ge=0.0, description="Label noise added to class scores")
    classes_per_client: int = Field(2, ge=1, description="Classes S assigned to each client")
    samples_per_class: int = Field(50, ge=1, description="Rows m sampled per assigned class")
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0, description="Held-out share of each shard")
    dataset_path: Optional[str] = Field(None, description="Optional BFD1 file replacing the synthetic pool")


class AttackSpec(_StrictModel):
    """Byzantine attack assignment"""
    kind: AttackKind = Field(AttackKind.NONE, description="none, sr or ml")
    sigma: float = Field(10.0, ge=0.0, description="SR noise scale")
    mode: MislabelMode = Field(MislabelMode.CYCLIC_SHIFT, description="ML label switching rule")
    seed: int = Field(0, ge=0, description="Seed mixed into attack noise streams")


class TransportConfig(_StrictModel):
    """Round transport settings"""
    mode: TransportMode = Field(TransportMode.SEQUENTIAL, description="sequential or parallel")
    dtype: WireDtype = Field(WireDtype.F32, description="Wire precision")
    host: Optional[str] = Field(None, description="Listening host, defaults to runtime settings")
    port: Optional[int] = Field(None, ge=0, le=65535, description="Listening port, 0 picks a free one")
    compute_delay_ms: float = Field(0.0, ge=0.0, description="Artificial per-client compute time")
    timeout_s: Optional[float] = Field(None, gt=0.0, description="Socket timeout, defaults to runtime settings")


class MetaTestConfig(_StrictModel):
    """Transfer evaluation on new clients"""
    new_clients: int = Field(5, ge=1, description="Number of held-out clients")
    samples_per_class: int = Field(20, ge=1, description="Rows per class for each new client")
    epochs: int = Field(10, ge=0, description="Head fine-tuning epochs")
    sample_seed_offset: int = Field(1000, ge=1, description="Offset giving new clients an independent draw")


class OutputConfig(_StrictModel):
    """Metric sink settings"""
    out_dir: str = Field("runs/latest", description="Directory for CSVs and manifest")
    wall_clock_columns: bool = Field(False, description="Write measured times into summary.csv")


class ExperimentConfig(_StrictModel):
    """Complete description of one run"""
    description: Optional[str] = Field(None, description="Free text, e.g. preset scaling notes")
    protocol: Protocol = Field(Protocol.BR_MTRL, description="Training protocol")
    aggregator: Optional[AggregatorName] = Field(None, description="Defaults to gm for br-mtrl, mean otherwise")
    clients: int = Field(20, ge=1, description="Number of clients n")
    byzantine_count: Optional[int] = Field(None, ge=0, description="Number of Byzantine clients")
    byzantine_ids: Optional[List[int]] = Field(None, description="Explicit Byzantine client ids")
    attack: AttackSpec = Field(default_factory=AttackSpec)
    rounds: int = Field(30, ge=0, description="Communication rounds T")
    tau_h: int = Field(10, ge=0, description="Head epochs per round")
    tau_phi: int = Field(1, ge=0, description="Representation epochs per round")
    local_epochs: Optional[int] = Field(None, ge=0, description="Joint epochs for fedper/fedavg/naive, defaults to tau_h")
    lr: float = Field(0.01, gt=0.0, description="Step size eta")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="Momentum beta")
    batch_size: int = Field(10, ge=1, description="Minibatch size")
    participation: float = Field(1.0, description="Fraction of clients per round, fixed at 1.0")
    gm_tol: float = Field(1e-8, gt=0.0, description="Weiszfeld stopping tolerance")
    gm_max_iter: int = Field(1000, ge=1, description="Weiszfeld iteration cap")
    seed: int = Field(0, ge=0, description="Master seed")
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    meta: MetaTestConfig = Field(default_factory=MetaTestConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.participation != 1.0:
            raise ValueError("participation is fixed at 1.0 (all clients every round)")
        if self.data.k_true > self.model.input_dim:
            raise ValueError(f"data.k_true={self.data.k_true} exceeds model.input_dim={self.model.input_dim}")
        if self.data.classes_per_client > self.model.num_classes:
            raise ValueError("data.classes_per_client exceeds model.num_classes")
        for section in ("data", "meta"):
            per_class = getattr(self, section).samples_per_class
            if held_out_count(per_class, self.data.test_fraction) < 1:
                raise ValueError(
                    f"{section}.samples_per_class={per_class} with data.test_fraction="
                    f"{self.data.test_fraction} leaves every test slice empty"
                )
        if self.byzantine_count is not None and self.byzantine_count > self.clients:
            raise ValueError(f"byzantine_count={self.byzantine_count} exceeds clients={self.clients}")
        if self.byzantine_ids is not None:
            if len(set(self.byzantine_ids)) != len(self.byzantine_ids):
                raise ValueError("byzantine_ids contains duplicates")
            for cid in self.byzantine_ids:
                if not 0 <= cid < self.clients:
                    raise ValueError(f"byzantine id {cid} outside [0, {self.clients})")
            if self.byzantine_count is not None and self.byzantine_count != len(self.byzantine_ids):
                raise ValueError("byzantine_count disagrees with byzantine_ids")
        if self.resolved_aggregator() == AggregatorName.KRUM:
            f = self.num_byzantine()
            if self.clients < f + 3:
                raise ValueError(
                    f"krum requires clients >= byzantine + 3 (the Byzantine count must be known "
                    f"in advance), got clients={self.clients}, byzantine={f}"
                )
        return self

    def num_byzantine(self) -> int:
        if self.byzantine_ids is not None:
            return len(self.byzantine_ids)
        return self.byzantine_count or 0

    def resolved_aggregator(self) -> AggregatorName:
        if self.aggregator is not None:
            return self.aggregator
        return AggregatorName.GM if self.protocol == Protocol.BR_MTRL else AggregatorName.MEAN

    def resolve(self) -> "ExperimentConfig":
        """Return a copy with every derived default materialized"""
        ids = self.byzantine_ids
        if ids is None:
            count = self.byzantine_count or 0
            rng = np.random.default_rng([self.seed, 0xB12])
            ids = sorted(int(i) for i in rng.choice(self.clients, size=count, replace=False))
        return self.model_copy(update={
            "aggregator": self.resolved_aggregator(),
            "byzantine_ids": sorted(ids),
            "byzantine_count": len(ids),
            "local_epochs": self.tau_h if self.local_epochs is None else self.local_epochs,
        })


def apply_overrides(document: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Apply dotted-key overrides (e.g. ``attack.sigma``) to a raw config document

    Returns:
        A new document; the input is left untouched
    """
    result = _deep_copy(document)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = result
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot override {dotted}: {part} is not a section")
        node[parts[-1]] = value
    return result


def _deep_copy(document: Dict[str, Any]) -> Dict[str, Any]:
    return {k: _deep_copy(v) if isinstance(v, dict) else v for k, v in document.items()}
