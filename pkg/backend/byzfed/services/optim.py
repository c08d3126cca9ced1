"""
SGD with heavy-ball momentum

The generic GD(f, h, eta) step of the training loop: v' = beta*v + g, p' = p - eta*v'.
Optimizer values are immutable; every step returns a new one.
"""
from typing import Optional, Tuple

from ..exceptions import ConfigError, ShapeError
from .model import Layer, LayerTag, ParamSet


class Optimizer:
    """Step size, momentum coefficient and a velocity buffer shaped like the parameters"""

    __slots__ = ("lr", "momentum", "velocity")

    def __init__(self, lr: float, momentum: float, velocity: ParamSet):
        if not lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = velocity

    @classmethod
    def for_params(cls, params: ParamSet, lr: float, momentum: float) -> "Optimizer":
        """Zero-initialized velocity matching params"""
        return cls(lr, momentum, params.zeros_like())

    def with_velocity(self, velocity: ParamSet) -> "Optimizer":
        return Optimizer(self.lr, self.momentum, velocity)

    def __repr__(self) -> str:
        return f"Optimizer(lr={self.lr}, momentum={self.momentum})"


def _check(params: ParamSet, grads: ParamSet, opt: Optimizer):
    params.check_compatible(grads, "gradients")
    params.check_compatible(opt.velocity, "velocity")


def step(params: ParamSet, grads: ParamSet, opt: Optimizer) -> Tuple[ParamSet, Optimizer]:
    """One momentum step on every layer"""
    return step_partial(params, grads, opt, tag=None)


def step_partial(params: ParamSet, grads: ParamSet, opt: Optimizer,
                 tag: Optional[LayerTag]) -> Tuple[ParamSet, Optimizer]:
    """
    Momentum step restricted to layers carrying tag

    Layers with another tag, and their velocity entries, are passed through
    untouched (the very same arrays). tag=None updates everything.

    Raises:
        ShapeError: params, grads and velocity disagree in shape
    """
    _check(params, grads, opt)
    beta, lr = opt.momentum, opt.lr

    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, opt.velocity):
        if tag is not None and p.tag != LayerTag(tag):
            new_params.append(p)
            new_velocity.append(v)
            continue
        vw = beta * v.weight + g.weight
        vb = beta * v.bias + g.bias
        new_velocity.append(Layer(vw, vb, v.tag))
        new_params.append(Layer(p.weight - lr * vw, p.bias - lr * vb, p.tag))

    return ParamSet(new_params), opt.with_velocity(ParamSet(new_velocity))


def velocity_part(opt: Optimizer, tag: LayerTag) -> ParamSet:
    """Velocity layers of one side of the split"""
    layers = [v for v in opt.velocity if v.tag == tag]
    if not layers:
        raise ShapeError(f"optimizer holds no {tag.value} velocity")
    return ParamSet(layers)