"""
Byzantine attack injection

Scaled random (SR) noise on the transmitted representation, and label
switching (ML) applied once to a malicious client's training labels.
"""
import logging

import numpy as np

from ..exceptions import ContractError, DataError
from ..models.schemas import MislabelMode
from .model import Layer, LayerTag, ParamSet

logger = logging.getLogger(__name__)


def attack_sr(rep: ParamSet, sigma: float, rng: np.random.Generator) -> ParamSet:
    """
    Return rep + sigma * N(0, I), one independent draw per scalar

    Raises:
        ContractError: rep carries head layers or sigma < 0
    """
    if rep.has_head():
        raise ContractError("SR attack applies to the shared representation only")
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return rep
    return ParamSet([
        Layer(
            layer.weight + sigma * rng.standard_normal(layer.weight.shape),
            layer.bias + sigma * rng.standard_normal(layer.bias.shape),
            LayerTag.SHARED,
        )
        for layer in rep
    ])


def attack_ml(labels: np.ndarray, num_classes: int, mode: MislabelMode) -> np.ndarray:
    """
    Switch labels

    cyclic-shift maps y -> (y + 1) mod C. pairwise-swap maps y -> y xor 1,
    leaving the last class fixed when C is odd.

    Raises:
        DataError: a label outside [0, C)
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")

    mode = MislabelMode(mode)
    if mode == MislabelMode.CYCLIC_SHIFT:
        return (labels + 1) % num_classes
    swapped = labels ^ 1
    return np.where(swapped < num_classes, swapped, labels)
