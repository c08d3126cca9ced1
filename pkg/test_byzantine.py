"""
Tests for Byzantine attack injection
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))

import numpy as np
import pytest

from byzfed.exceptions import ContractError, DataError
from byzfed.models.schemas import MislabelMode
from byzfed.services.byzantine import attack_ml, attack_sr
from byzfed.services.model import Layer, ParamSet, build_model, split


@pytest.fixture
def rep():
    return split(build_model(32, [], 4, 10, seed=0))[0]


def test_zero_sigma_is_identity(rep):
    assert attack_sr(rep, 0.0, np.random.default_rng(0)).equals(rep)


def test_sr_is_seeded(rep):
    a = attack_sr(rep, 10.0, np.random.default_rng([1, 2]))
    b = attack_sr(rep, 10.0, np.random.default_rng([1, 2]))
    c = attack_sr(rep, 10.0, np.random.default_rng([1, 3]))

    assert a.equals(b)
    assert not a.equals(c)
    assert a.shapes == rep.shapes and a.tags == rep.tags


def test_sr_noise_norm_follows_chi_mean(rep):
    sigma = 10.0
    rng = np.random.default_rng(7)
    norms = [(attack_sr(rep, sigma, rng) - rep).frobenius_norm() for _ in range(200)]

    assert np.mean(norms) == pytest.approx(sigma * np.sqrt(rep.num_params), rel=0.02)


def test_sr_scalar_perturbations_have_sigma_spread():
    scalars = ParamSet([Layer(np.zeros((5000, 1)), np.zeros(5000))])
    noise = attack_sr(scalars, 2.0, np.random.default_rng(9)).flatten()

    assert abs(noise.mean()) <= 0.1
    assert 1.9 <= noise.std() <= 2.1


def test_sr_spread_scales_with_sigma():
    scalars = ParamSet([Layer(np.zeros((5000, 1)), np.zeros(5000))])
    narrow = attack_sr(scalars, 2.0, np.random.default_rng(21)).flatten()
    wide = attack_sr(scalars, 4.0, np.random.default_rng(21)).flatten()

    np.testing.assert_allclose(wide, 2.0 * narrow, rtol=1e-15)
    assert wide.std() == pytest.approx(2.0 * narrow.std(), rel=1e-12)

    independent = attack_sr(scalars, 4.0, np.random.default_rng(22)).flatten()
    assert independent.std() / narrow.std() == pytest.approx(2.0, rel=0.05)


def test_sr_rejects_heads_and_negative_sigma(rep):
    with pytest.raises(ContractError):
        attack_sr(build_model(32, [], 4, 10, seed=0), 1.0, np.random.default_rng(0))
    with pytest.raises(ContractError):
        attack_sr(rep, -1.0, np.random.default_rng(0))


def test_cyclic_shift():
    labels = np.array([0, 1, 2, 9])
    np.testing.assert_array_equal(attack_ml(labels, 10, MislabelMode.CYCLIC_SHIFT), [1, 2, 3, 0])


def test_pairwise_swap_is_an_involution():
    labels = np.arange(5)
    swapped = attack_ml(labels, 5, MislabelMode.PAIRWISE_SWAP)

    np.testing.assert_array_equal(swapped, [1, 0, 3, 2, 4])
    np.testing.assert_array_equal(attack_ml(swapped, 5, MislabelMode.PAIRWISE_SWAP), labels)


def test_cyclic_shift_repeated_c_times_is_identity():
    labels = np.arange(7)
    shifted = attack_ml(labels, 7, MislabelMode.CYCLIC_SHIFT)
    assert np.all(shifted != labels)

    for _ in range(6):
        shifted = attack_ml(shifted, 7, MislabelMode.CYCLIC_SHIFT)
    np.testing.assert_array_equal(shifted, labels)


def test_pairwise_swap_keeps_last_class_for_odd_c():
    np.testing.assert_array_equal(attack_ml(np.array([0, 1, 2]), 3, MislabelMode.PAIRWISE_SWAP), [1, 0, 2])


def test_ml_rejects_out_of_range_labels():
    with pytest.raises(DataError):
        attack_ml(np.array([0, 10]), 10, MislabelMode.CYCLIC_SHIFT)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
