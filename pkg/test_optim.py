"""
Tests for the SGD-momentum optimizer
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

import numpy as np
import pytest

from byzfed.exceptions import ConfigError, ShapeError
from byzfed.services.model import Layer, LayerTag, ParamSet, build_model, split
from byzfed.services.optim import Optimizer, step, step_partial, velocity_part


@pytest.fixture
def params():
    return build_model(5, [4], 3, 2, seed=3)


def test_momentum_step_matches_formula(params):
    rng = np.random.default_rng(0)
    grads = params.map(lambda a: rng.standard_normal(a.shape))
    velocity = params.map(lambda a: rng.standard_normal(a.shape))
    opt = Optimizer(0.1, 0.9, velocity)

    new_params, new_opt = step(params, grads, opt)

    expected_v = velocity.scale(0.9) + grads
    np.testing.assert_allclose(new_opt.velocity.flatten(), expected_v.flatten(), rtol=1e-15)
    np.testing.assert_allclose(new_params.flatten(), (params - expected_v.scale(0.1)).flatten(), rtol=1e-14)


def _scalar(value: float) -> ParamSet:
    return ParamSet([Layer([[value]], [0.0])])


def test_single_step_worked_example():
    new_params, new_opt = step(_scalar(1.0), _scalar(2.0), Optimizer.for_params(_scalar(0.0), 0.01, 0.9))

    assert new_opt.velocity[0].weight[0, 0] == pytest.approx(2.0)
    assert new_params[0].weight[0, 0] == pytest.approx(0.98)


def test_momentum_accumulates_over_two_steps(params):
    grads = params.map(lambda a: np.full(a.shape, 0.7))
    opt = Optimizer.for_params(params, 0.01, 0.9)

    current, opt = step(params, grads, opt)
    current, opt = step(current, grads, opt)

    np.testing.assert_allclose(opt.velocity.flatten(), 1.9 * grads.flatten(), rtol=1e-14)


def test_plain_descent_on_squared_norm_converges(params):
    opt = Optimizer.for_params(params, 0.1, 0.0)
    current = params
    norms = [current.frobenius_norm()]

    for _ in range(200):
        current, opt = step(current, current.scale(2.0), opt)
        norms.append(current.frobenius_norm())
        if norms[-1] < 1e-6:
            break

    assert norms[-1] < 1e-6
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_zero_gradients_keep_params_and_decay_velocity(params):
    zeros = params.zeros_like()
    fresh = Optimizer.for_params(params, 0.05, 0.9)
    same, opt = step_partial(params, zeros, fresh, LayerTag.SHARED)
    assert same.equals(params)
    assert not opt.velocity.flatten().any()

    velocity = params.map(np.ones_like)
    _, decayed = step_partial(params, zeros, Optimizer(0.05, 0.9, velocity), LayerTag.SHARED)
    shared_velocity = velocity_part(decayed, LayerTag.SHARED)
    np.testing.assert_array_equal(shared_velocity.flatten(), np.full(shared_velocity.num_params, 0.9))


def test_partial_step_leaves_other_tag_untouched(params):
    grads = params.map(np.ones_like)
    opt = Optimizer(0.1, 0.5, params.map(np.ones_like))

    new_params, new_opt = step_partial(params, grads, opt, LayerTag.HEAD)

    for i, layer in enumerate(params):
        if layer.tag == LayerTag.SHARED:
            assert new_params[i] is layer
            assert new_opt.velocity[i] is opt.velocity[i]
        else:
            assert not np.array_equal(new_params[i].weight, layer.weight)
    new_shared, _ = split(new_params)
    assert new_shared.equals(split(params)[0])


def test_optimizer_validates_hyperparameters(params):
    with pytest.raises(ConfigError):
        Optimizer.for_params(params, 0.0, 0.9)
    with pytest.raises(ConfigError):
        Optimizer.for_params(params, 0.1, 1.0)


def test_shape_mismatch_is_rejected(params):
    other = build_model(5, [3], 3, 2, seed=0)
    with pytest.raises(ShapeError):
        step(params, other, Optimizer.for_params(params, 0.1, 0.9))


def test_velocity_part_splits_by_tag(params):
    opt = Optimizer.for_params(params, 0.1, 0.9)

    assert len(velocity_part(opt, LayerTag.SHARED)) == 2
    assert len(velocity_part(opt, LayerTag.HEAD)) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
