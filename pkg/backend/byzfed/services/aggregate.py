"""
Server-side aggregation rules

Mean (FedAvg), layerwise geometric median via Weiszfeld iterations, and
Krum. Each rule is a pure function of the submitted updates; the objective
and score functions are exposed so tests can check the rules against
brute-force evaluation.
"""
import logging
from abc import ABC, abstractmethod
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ConfigError, ShapeError
from ..models.schemas import AggregatorName, ExperimentConfig
from .model import Layer, ParamSet

logger = logging.getLogger(__name__)

GM_EPSILON = 1e-12


class UpdateSet:
    """n shape-identical ParamSets indexed by client position"""

    def __init__(self, updates: Sequence[ParamSet]):
        self._updates: Tuple[ParamSet, ...] = tuple(updates)
        if not self._updates:
            raise ConfigError("cannot aggregate an empty update set")
        reference = self._updates[0]
        for i, update in enumerate(self._updates[1:], start=1):
            try:
                reference.check_compatible(update, f"update {i}")
            except ShapeError:
                logger.error(f"Update {i} does not match the shape of update 0")
                raise

    def __len__(self) -> int:
        return len(self._updates)

    def __getitem__(self, index: int) -> ParamSet:
        return self._updates[index]

    def __iter__(self):
        return iter(self._updates)

    @property
    def template(self) -> ParamSet:
        return self._updates[0]

    def flattened(self) -> np.ndarray:
        """n x P matrix of whole updates"""
        return np.stack([u.flatten() for u in self._updates])

    def layer_points(self, index: int) -> np.ndarray:
        """n x (out*(in+1)) matrix of one layer, bias as an extra column"""
        return np.stack([u[index].as_matrix().ravel() for u in self._updates])


class GeometricMedian(NamedTuple):
    params: ParamSet
    converged: bool
    iterations: int


def _layer_from_point(point: np.ndarray, like: Layer) -> Layer:
    matrix = point.reshape(like.out_dim, like.in_dim + 1)
    return Layer(matrix[:, :-1], matrix[:, -1], like.tag)


def _sum_of_distances(points: np.ndarray, center: np.ndarray) -> float:
    return float(np.linalg.norm(points - center, axis=1).sum())


def weiszfeld(points: np.ndarray, tol: float, max_iter: int,
              eps: float = GM_EPSILON) -> Tuple[np.ndarray, bool, int]:
    """
    Geometric median of the rows of points

    Starts at the mean; weights 1/max(distance, eps). Stops once the iterate
    moves less than tol, or after max_iter steps.

    Returns:
        (best iterate by objective, converged flag, iterations run)
    """
    if tol <= 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    estimate = points.mean(axis=0)
    best, best_objective = estimate, _sum_of_distances(points, estimate)

    for iteration in range(1, max_iter + 1):
        distances = np.linalg.norm(points - estimate, axis=1)
        weights = 1.0 / np.maximum(distances, eps)
        candidate = (weights[:, None] * points).sum(axis=0) / weights.sum()
        objective = _sum_of_distances(points, candidate)
        if objective < best_objective:
            best, best_objective = candidate, objective
        moved = float(np.linalg.norm(candidate - estimate))
        estimate = candidate
        if moved < tol:
            return best, True, iteration

    return best, False, max_iter


def agg_mean(u: UpdateSet) -> ParamSet:
    """Entrywise arithmetic mean"""
    return ParamSet([
        Layer(
            np.mean([update[i].weight for update in u], axis=0),
            np.mean([update[i].bias for update in u], axis=0),
            layer.tag,
        )
        for i, layer in enumerate(u.template)
    ])


def geometric_median(u: UpdateSet, tol: float = 1e-8, max_iter: int = 1000) -> GeometricMedian:
    """Layerwise geometric median under the Frobenius norm, with diagnostics"""
    layers, converged, iterations = [], True, 0
    for i, layer in enumerate(u.template):
        point, layer_converged, layer_iterations = weiszfeld(u.layer_points(i), tol, max_iter)
        layers.append(_layer_from_point(point, layer))
        converged = converged and layer_converged
        iterations = max(iterations, layer_iterations)

    if not converged:
        logger.warning(f"Weiszfeld did not reach tol={tol} within {max_iter} iterations; "
                       f"returning best iterate")
    return GeometricMedian(ParamSet(layers), converged, iterations)


def agg_gm(u: UpdateSet, tol: float = 1e-8, max_iter: int = 1000) -> ParamSet:
    """Layerwise geometric median estimate"""
    return geometric_median(u, tol, max_iter).params


def gm_objective(u: UpdateSet, candidate: ParamSet) -> float:
    """Sum over layers and updates of Frobenius distances to candidate"""
    u.template.check_compatible(candidate, "candidate")
    return sum(
        _sum_of_distances(u.layer_points(i), layer.as_matrix().ravel())
        for i, layer in enumerate(candidate)
    )


def _krum_neighbours(n: int, f: int) -> int:
    neighbours = n - f - 2
    if f < 0 or neighbours < 1:
        raise ConfigError(
            f"Krum requires n >= f + 3 and the Byzantine count f known in advance; got n={n}, f={f}"
        )
    return neighbours


def krum_scores(u: UpdateSet, f: int) -> List[float]:
    """Sum of Euclidean distances from each update to its n - f - 2 nearest other updates"""
    n = len(u)
    neighbours = _krum_neighbours(n, f)
    flat = u.flattened()
    distances = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
    scores = []
    for i in range(n):
        others = np.sort(np.delete(distances[i], i))
        scores.append(float(others[:neighbours].sum()))
    return scores


def agg_krum(u: UpdateSet, f: int) -> Tuple[int, ParamSet]:
    """
    Select the update with the smallest Krum score

    Returns:
        (index, that update unchanged); ties go to the lowest index

    Raises:
        ConfigError: n < f + 3
    """
    scores = krum_scores(u, f)
    index = int(np.argmin(scores))
    logger.debug(f"Krum selected update {index} (score {scores[index]:.6g}, n={len(u)}, f={f})")
    return index, u[index]


class AggregationResult(NamedTuple):
    params: ParamSet
    selected: Optional[int] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None


class BaseAggregator(ABC):
    """Common interface for server aggregation rules"""

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def aggregate(self, updates: UpdateSet) -> AggregationResult:
        pass


class MeanAggregator(BaseAggregator):
    name = "mean"

    def aggregate(self, updates: UpdateSet) -> AggregationResult:
        return AggregationResult(agg_mean(updates))


class GeometricMedianAggregator(BaseAggregator):
    name = "gm"

    def __init__(self, tol: float = 1e-8, max_iter: int = 1000):
        self.tol = tol
        self.max_iter = max_iter

    def aggregate(self, updates: UpdateSet) -> AggregationResult:
        result = geometric_median(updates, self.tol, self.max_iter)
        return AggregationResult(result.params, iterations=result.iterations, converged=result.converged)


class KrumAggregator(BaseAggregator):
    name = "krum"

    def __init__(self, byzantine_count: int):
        self.byzantine_count = byzantine_count

    def aggregate(self, updates: UpdateSet) -> AggregationResult:
        index, params = agg_krum(updates, self.byzantine_count)
        return AggregationResult(params, selected=index)


class AggregatorFactory:
    """Factory for creating aggregation rules from configuration"""

    # Registry of available rules
    _aggregators = {
        AggregatorName.MEAN: lambda cfg: MeanAggregator(),
        AggregatorName.GM: lambda cfg: GeometricMedianAggregator(cfg.gm_tol, cfg.gm_max_iter),
        AggregatorName.KRUM: lambda cfg: KrumAggregator(cfg.num_byzantine()),
    }

    @classmethod
    def create(cls, cfg: ExperimentConfig) -> BaseAggregator:
        name = cfg.resolved_aggregator()
        if name not in cls._aggregators:
            supported = ", ".join(a.value for a in cls._aggregators)
            raise ConfigError(f"Unsupported aggregator: {name}. Supported: {supported}")
        aggregator = cls._aggregators[name](cfg)
        logger.info(f"Created {aggregator.__class__.__name__} for aggregator={name.value}")
        return aggregator
