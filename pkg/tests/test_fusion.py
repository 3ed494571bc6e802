import math

import numpy as np
import pytest

from dualcorr import numcore as nc
from dualcorr.encoders import PatchFeatureMap, WordFeatures
from dualcorr.fusion import FusionParams, attend, attention_logits
from dualcorr.numcore import DimensionError, Tensor


def fixed_params(d=2):
    return FusionParams(
        nc.parameter(np.ones(d)),
        nc.parameter(np.eye(d)),
        nc.parameter(np.eye(d)),
    )


def test_attention_by_hand():
    # one patch, two words, identity projections, w = (1, 1)
    v = PatchFeatureMap(Tensor([[0.5, 0.0]]), 1, 1)
    q = WordFeatures(Tensor([[1.0, 0.0], [0.0, 1.0]]))
    fused = attend(v, q, fixed_params())
    l0 = math.tanh(1.5) + math.tanh(0.0)
    l1 = math.tanh(0.5) + math.tanh(1.0)
    e0 = math.exp(l0) / (math.exp(l0) + math.exp(l1))
    np.testing.assert_allclose(fused.attention.data, [[e0, 1 - e0]], atol=1e-15)
    np.testing.assert_allclose(fused.features.data, [[e0, 1 - e0]], atol=1e-15)


def test_single_word_gets_all_attention():
    rng = np.random.default_rng(0)
    params = FusionParams.init(rng, 3)
    v = PatchFeatureMap(Tensor(rng.normal(size=(4, 3))), 2, 2)
    q = WordFeatures(Tensor(rng.normal(size=(1, 3))))
    fused = attend(v, q, params)
    np.testing.assert_allclose(fused.attention.data, np.ones((4, 1)))
    np.testing.assert_allclose(fused.features.data, np.repeat(q.features.data, 4, axis=0))


def test_rows_are_convex_combinations_of_words():
    rng = np.random.default_rng(1)
    params = FusionParams.init(rng, 4)
    v = PatchFeatureMap(Tensor(rng.normal(size=(6, 4))), 2, 3)
    q = WordFeatures(Tensor(rng.normal(size=(5, 4))))
    fused = attend(v, q, params)
    e = fused.attention.data
    assert np.all(e >= 0)
    np.testing.assert_allclose(e.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(fused.features.data, e @ q.features.data, atol=1e-12)


def test_permuting_words_permutes_attention_and_keeps_output():
    rng = np.random.default_rng(2)
    params = FusionParams.init(rng, 4)
    v = PatchFeatureMap(Tensor(rng.normal(size=(4, 4))), 2, 2)
    qd = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = attend(v, WordFeatures(Tensor(qd)), params)
    b = attend(v, WordFeatures(Tensor(qd[perm])), params)
    np.testing.assert_allclose(b.attention.data, a.attention.data[:, perm], atol=1e-14)
    np.testing.assert_allclose(b.features.data, a.features.data, atol=1e-14)


def test_dimension_mismatch():
    params = FusionParams.init(np.random.default_rng(3), 3)
    with pytest.raises(DimensionError):
        attention_logits(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), params)


def test_fusion_parameter_gradients():
    rng = np.random.default_rng(4)
    params = FusionParams.init(rng, 3)
    v = PatchFeatureMap(Tensor(rng.normal(size=(4, 3))), 2, 2)
    q = WordFeatures(Tensor(rng.normal(size=(3, 3))))
    target = Tensor(rng.normal(size=(4, 3)))

    def f(_):
        return (attend(v, q, params).features * target).sum()

    assert nc.finite_diff_check(f, params.parameters()) < 1e-4
