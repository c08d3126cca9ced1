"""
Split neural model q_i(x) = (h_i o phi)(x)

Dense layers with ReLU on the shared hidden layers, a linear representation
output and a linear client head. Forward and backward passes are written out
by hand; every function here is pure and works in float64.
"""
import logging
from enum import Enum
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ConfigError, ContractError, DataError, ShapeError

logger = logging.getLogger(__name__)


class LayerTag(str, Enum):
    """Which side of the phi/h split a layer belongs to"""
    SHARED = "shared"
    HEAD = "head"


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {array.shape}")
    array.setflags(write=False)
    return array


class Layer:
    """One dense layer: weight (out x in), bias (out), tag"""

    __slots__ = ("weight", "bias", "tag")

    def __init__(self, weight, bias, tag: LayerTag = LayerTag.SHARED):
        self.weight = _frozen(weight, 2, "weight")
        self.bias = _frozen(bias, 1, "bias")
        self.tag = LayerTag(tag)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match weight rows {self.weight.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def as_matrix(self) -> np.ndarray:
        """Weight with the bias appended as an extra column"""
        return np.hstack([self.weight, self.bias[:, None]])

    def __repr__(self) -> str:
        return f"Layer({self.tag.value}, {self.out_dim}x{self.in_dim})"


class ParamSet:
    """
    Ordered, immutable collection of dense layers

    Shared layers come first, head layers form a contiguous suffix (either
    part may be empty for the halves returned by split). Adjacent layers
    compose and every entry is finite.
    """

    def __init__(self, layers: Sequence[Layer]):
        self._layers: Tuple[Layer, ...] = tuple(layers)
        self._validate()

    def _validate(self):
        if not self._layers:
            raise ShapeError("a ParamSet needs at least one layer")
        seen_head = False
        for i, layer in enumerate(self._layers):
            if i > 0 and self._layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"input width {layer.in_dim} does not match previous output "
                    f"{self._layers[i - 1].out_dim}",
                    layer=i,
                )
            if layer.tag == LayerTag.HEAD:
                seen_head = True
            elif seen_head:
                raise ContractError(f"layer {i}: shared layer after a head layer")
            if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                raise ContractError(f"layer {i}: non-finite entries")

    @property
    def layers(self) -> Tuple[Layer, ...]:
        return self._layers

    def __len__(self) -> int:
        return len(self._layers)

    def __iter__(self) -> Iterator[Layer]:
        return iter(self._layers)

    def __getitem__(self, index: int) -> Layer:
        return self._layers[index]

    @property
    def tags(self) -> Tuple[LayerTag, ...]:
        return tuple(layer.tag for layer in self._layers)

    @property
    def shapes(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(layer.weight.shape for layer in self._layers)

    @property
    def num_params(self) -> int:
        return sum(layer.size for layer in self._layers)

    def count(self, tag: LayerTag) -> int:
        return sum(1 for layer in self._layers if layer.tag == tag)

    def has_head(self) -> bool:
        return self.count(LayerTag.HEAD) > 0

    def check_compatible(self, other: "ParamSet", what: str = "parameters"):
        """Raise ShapeError naming the first layer whose shape differs"""
        if len(self) != len(other):
            raise ShapeError(f"{what}: layer count {len(other)} != {len(self)}")
        for i, (mine, theirs) in enumerate(zip(self._layers, other.layers)):
            if mine.weight.shape != theirs.weight.shape:
                raise ShapeError(
                    f"{what}: shape {theirs.weight.shape} != {mine.weight.shape}", layer=i
                )

    def combine(self, other: "ParamSet", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ParamSet":
        """Apply fn entrywise to matching layers; tags follow self"""
        self.check_compatible(other)
        return ParamSet([
            Layer(fn(a.weight, b.weight), fn(a.bias, b.bias), a.tag)
            for a, b in zip(self._layers, other.layers)
        ])

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet([Layer(fn(l.weight), fn(l.bias), l.tag) for l in self._layers])

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.combine(other, np.add)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self.combine(other, np.subtract)

    def scale(self, factor: float) -> "ParamSet":
        return self.map(lambda a: a * factor)

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def with_tags(self, tags: Sequence[LayerTag]) -> "ParamSet":
        if len(tags) != len(self._layers):
            raise ShapeError(f"{len(tags)} tags for {len(self._layers)} layers")
        return ParamSet([Layer(l.weight, l.bias, t) for l, t in zip(self._layers, tags)])

    def flatten(self) -> np.ndarray:
        """All entries concatenated, each layer weight row-major then bias"""
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self._layers])

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.flatten()))

    def equals(self, other: "ParamSet") -> bool:
        """Bitwise equality including tags"""
        if self.tags != other.tags or self.shapes != other.shapes:
            return False
        return all(
            np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self._layers, other.layers)
        )

    def dump(self) -> str:
        """Debug text: one line per layer, `tag out in checksum`"""
        lines = []
        for layer in self._layers:
            checksum = float(layer.weight.sum() + layer.bias.sum())
            lines.append(f"{layer.tag.value} {layer.out_dim} {layer.in_dim} {checksum:.9g}")
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"ParamSet({', '.join(repr(l) for l in self._layers)})"


class Batch:
    """
    Inputs (m x d) with integer labels (m)

    Float labels are accepted only when every value is a whole number.
    """

    __slots__ = ("inputs", "labels")

    def __init__(self, inputs, labels):
        self.inputs = _frozen(inputs, 2, "inputs")
        raw = np.asarray(labels)
        if raw.dtype.kind == "f" and not np.array_equal(raw, np.round(raw)):
            raise DataError("labels must be whole numbers")
        labels = np.array(raw, dtype=np.int64, copy=True)
        if labels.ndim != 1:
            raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
        labels.setflags(write=False)
        self.labels = labels
        if self.inputs.shape[0] != labels.shape[0]:
            raise ShapeError(f"{self.inputs.shape[0]} input rows but {labels.shape[0]} labels")

    def __len__(self) -> int:
        return self.labels.shape[0]


class LossGrad(NamedTuple):
    loss: float
    grads: ParamSet
    correct_count: int


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int, tag: LayerTag) -> Layer:
    """Uniform in +-sqrt(6/fan_in), zero bias"""
    limit = np.sqrt(6.0 / fan_in)
    return Layer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out), tag)


def build_model(input_dim: int, hidden_dims: Sequence[int], rep_dim: int, num_classes: int,
                seed: int) -> ParamSet:
    """
    Build the split network d -> hidden... -> k (shared) -> C (head)

    Args:
        input_dim: d
        hidden_dims: widths of the shared hidden layers (ReLU)
        rep_dim: k, width of the linear representation output
        num_classes: C
        seed: deterministic initialization seed

    Raises:
        ConfigError: if any dimension is below 1
    """
    dims = [input_dim, *hidden_dims, rep_dim, num_classes]
    if any(int(d) < 1 for d in dims):
        raise ConfigError(f"all model dimensions must be >= 1, got {dims}")
    if rep_dim >= input_dim:
        logger.warning(f"Representation width k={rep_dim} is not below input width d={input_dim}")

    rng = np.random.default_rng(seed)
    widths = [input_dim, *hidden_dims, rep_dim]
    layers = [
        init_layer(rng, fan_in, fan_out, LayerTag.SHARED)
        for fan_in, fan_out in zip(widths[:-1], widths[1:])
    ]
    layers.append(init_layer(rng, rep_dim, num_classes, LayerTag.HEAD))
    return ParamSet(layers)


def init_head(rep_dim: int, num_classes: int, seed) -> ParamSet:
    """Fresh single-layer head k -> C"""
    rng = np.random.default_rng(seed)
    return ParamSet([init_layer(rng, rep_dim, num_classes, LayerTag.HEAD)])


def split(params: ParamSet) -> Tuple[ParamSet, ParamSet]:
    """Separate the shared prefix from the head suffix"""
    n_shared = params.count(LayerTag.SHARED)
    if n_shared == 0 or n_shared == len(params):
        raise ContractError("split needs both shared and head layers")
    return ParamSet(params.layers[:n_shared]), ParamSet(params.layers[n_shared:])


def join(shared: ParamSet, head: ParamSet) -> ParamSet:
    """Compose phi and h back into one model; the interface widths must agree"""
    if shared.has_head():
        raise ContractError("join expects a shared-only first argument")
    if head.count(LayerTag.SHARED):
        raise ContractError("join expects a head-only second argument")
    if shared[-1].out_dim != head[0].in_dim:
        raise ShapeError(
            f"representation width {shared[-1].out_dim} does not match head input {head[0].in_dim}",
            layer=len(shared),
        )
    return ParamSet(shared.layers + head.layers)


def _relu_after(params: ParamSet) -> List[bool]:
    # ReLU on every layer except the representation output and the final layer
    last_shared = params.count(LayerTag.SHARED) - 1
    final = len(params) - 1
    return [i != last_shared and i != final for i in range(len(params))]


def predict(params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    """Logits for a matrix of inputs"""
    if inputs.shape[1] != params[0].in_dim:
        raise ShapeError(f"input width {inputs.shape[1]} != {params[0].in_dim}", layer=0)
    relu = _relu_after(params)
    a = inputs
    for i, layer in enumerate(params):
        a = a @ layer.weight.T + layer.bias
        if relu[i]:
            a = np.maximum(a, 0.0)
    return a


def accuracy(params: ParamSet, batch: Batch) -> float:
    if len(batch) == 0:
        raise DataError("accuracy of an empty batch")
    logits = predict(params, batch.inputs)
    return float(np.mean(logits.argmax(axis=1) == batch.labels))


def forward_loss_grad(params: ParamSet, batch: Batch) -> LossGrad:
    """
    Mean softmax cross-entropy and its exact gradient w.r.t. every parameter

    Raises:
        ShapeError: batch width does not match the first layer
        DataError: empty batch or label outside [0, C)
    """
    inputs, labels = batch.inputs, batch.labels
    m = len(labels)
    if m == 0:
        raise DataError("empty batch")
    if inputs.shape[1] != params[0].in_dim:
        raise ShapeError(f"input width {inputs.shape[1]} != {params[0].in_dim}", layer=0)
    num_classes = params[-1].out_dim
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes})")

    relu = _relu_after(params)
    activations = [inputs]
    pre_activations = []
    a = inputs
    for i, layer in enumerate(params):
        z = a @ layer.weight.T + layer.bias
        pre_activations.append(z)
        a = np.maximum(z, 0.0) if relu[i] else z
        activations.append(a)

    logits = a
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(m)
    loss = float(-log_probs[rows, labels].mean())

    delta = np.exp(log_probs)
    delta[rows, labels] -= 1.0
    delta /= m

    grads: List[Optional[Layer]] = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        layer = params[i]
        grads[i] = Layer(delta.T @ activations[i], delta.sum(axis=0), layer.tag)
        if i > 0:
            delta = delta @ layer.weight
            if relu[i - 1]:
                delta = delta * (pre_activations[i - 1] > 0.0)

    correct = int(np.sum(logits.argmax(axis=1) == labels))
    return LossGrad(loss=max(loss, 0.0), grads=ParamSet(grads), correct_count=correct)
