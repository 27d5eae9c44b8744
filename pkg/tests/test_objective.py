import math

import numpy as np
import pytest

from geoenc.encoder import ComponentMatrix
from geoenc.errors import ConfigurationError, ContractViolation, NumericError, ValidationError
from geoenc.objective import (
    AttentionWeights,
    async_update,
    breakdown,
    cls_score,
    component_score,
    joint_loss,
    listwise_loss,
    parse_fusion,
    per_category_scores,
)


def matrix(rows):
    rows = np.asarray(rows, dtype=np.float64)
    present = np.array([bool(np.any(r != 0.0)) for r in rows])
    return ComponentMatrix(rows=rows, present=present)


def weights(values, gamma=1.0, frozen=False):
    return AttentionWeights(
        w=np.asarray(values, dtype=np.float64), gamma=gamma, frozen=frozen,
        init_value=float(values[0]),
    )


class TestAttentionWeights:
    def test_initial_fills_with_init_value(self):
        attn = AttentionWeights.initial(4, init_value=0.5, gamma=3.0)
        assert np.all(attn.w == 0.5)
        assert attn.gamma == 3.0 and not attn.frozen

    def test_initial_rejects_nonpositive_gamma(self):
        with pytest.raises(ConfigurationError):
            AttentionWeights.initial(2, gamma=0.0)


class TestComponentScore:
    def test_hand_oracle_two_categories(self):
        # w = [1, 0.5]; rows q=[[1,0],[2,2]], c=[[1,1],[1,0]]
        # score = 1^2 * (1*1 + 0*1) + 0.5^2 * (2*1 + 2*0) = 1 + 0.5 = 1.5
        q = matrix([[1.0, 0.0], [2.0, 2.0]])
        c = matrix([[1.0, 1.0], [1.0, 0.0]])
        assert component_score(q, c, weights([1.0, 0.5])) == pytest.approx(1.5, abs=1e-15)

    def test_per_category_decomposition_sums_to_total(self):
        rng = np.random.default_rng(7)
        q = matrix(rng.normal(size=(5, 4)))
        c = matrix(rng.normal(size=(5, 4)))
        attn = weights([0.3, 1.0, 2.0, 0.1, 0.7])
        parts = per_category_scores(q, c, attn)
        assert parts.shape == (5,)
        assert component_score(q, c, attn) == pytest.approx(parts.sum(), rel=1e-12)

    def test_zero_row_contributes_exactly_zero(self):
        q = matrix([[0.0, 0.0], [3.0, -1.0]])
        c = matrix([[5.0, 9.0], [1.0, 1.0]])
        parts = per_category_scores(q, c, weights([100.0, 1.0]))
        assert parts[0] == 0.0

    def test_weight_enters_squared(self):
        q = matrix([[1.0, 1.0]])
        c = matrix([[1.0, 1.0]])
        doubled = component_score(q, c, weights([2.0]))
        unit = component_score(q, c, weights([1.0]))
        assert doubled == pytest.approx(4.0 * unit, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            per_category_scores(matrix([[1.0]]), matrix([[1.0, 2.0]]), weights([1.0]))

    def test_weight_length_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            per_category_scores(matrix([[1.0]]), matrix([[1.0]]), weights([1.0, 1.0]))


class TestClsScore:
    def test_dot_product_oracle(self):
        assert cls_score(np.array([1.0, 2.0]), np.array([3.0, -1.0])) == pytest.approx(
            1.0, abs=1e-15
        )

    def test_no_normalization(self):
        q = np.array([2.0, 0.0])
        # normalized score would be 1.0; unnormalized dot is 4.0
        assert cls_score(q, q) == pytest.approx(4.0)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            cls_score(np.array([1.0]), np.array([1.0, 2.0]))


class TestBreakdown:
    def test_total_decomposes(self):
        rng = np.random.default_rng(3)
        qc, cc = rng.normal(size=4), rng.normal(size=4)
        qm, cm = matrix(rng.normal(size=(3, 4))), matrix(rng.normal(size=(3, 4)))
        attn = weights([1.0, 0.2, 0.9])
        b = breakdown(qc, cc, qm, cm, attn)
        assert b.cls_score == pytest.approx(float(qc @ cc), rel=1e-12)
        assert b.component_score == pytest.approx(b.per_category.sum(), rel=1e-12)


class TestListwiseLoss:
    def test_uniform_two_way_is_ln2(self):
        assert listwise_loss(np.zeros(2), 0) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_confident_correct_is_tiny(self):
        # log(1 + e^-20) = 2.0611536e-9
        assert listwise_loss(np.array([20.0, 0.0]), 0) == pytest.approx(
            2.061153622438558e-09, rel=1e-6
        )

    def test_shift_invariance(self):
        scores = np.array([1.0, -2.0, 0.5])
        assert listwise_loss(scores, 1) == pytest.approx(
            listwise_loss(scores + 37.0, 1), rel=1e-12
        )

    def test_candidate_permutation_tracks_gold(self):
        scores = np.array([1.0, -2.0, 0.5])
        assert listwise_loss(scores, 0) == pytest.approx(
            listwise_loss(scores[[2, 0, 1]], 1), rel=1e-12
        )

    def test_large_scores_stay_finite(self):
        assert math.isfinite(listwise_loss(np.array([1e4, -1e4, 0.0]), 0))

    def test_nan_scores_raise(self):
        with pytest.raises(NumericError):
            listwise_loss(np.array([float("nan"), 0.0]), 0)

    def test_gold_index_validated(self):
        with pytest.raises(ContractViolation):
            listwise_loss(np.zeros(2), 5)

    def test_single_candidate_rejected(self):
        with pytest.raises(ContractViolation):
            listwise_loss(np.zeros(1), 0)


class TestJointLoss:
    def test_unit_weighted_sum(self):
        assert joint_loss(0.7, 1.1) == pytest.approx(1.8, rel=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            joint_loss(float("inf"), 0.0)


class TestAsyncUpdate:
    def test_hand_oracle_step(self):
        # w=1, grad=0.5, base_lr=0.1, gamma=10 -> w' = 1 - 0.1*10*0.5 = 0.5
        attn = weights([1.0], gamma=10.0)
        out = async_update(attn, np.array([0.5]), base_lr=0.1)
        assert out.w[0] == pytest.approx(0.5, abs=1e-15)

    def test_input_left_unchanged(self):
        attn = weights([1.0], gamma=2.0)
        async_update(attn, np.array([1.0]), base_lr=0.1)
        assert attn.w[0] == 1.0

    @pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0, 2000.0])
    def test_step_ratio_is_gamma(self, gamma):
        grad = np.array([0.25, -0.5])
        attn = weights([1.0, 1.0], gamma=gamma)
        out = async_update(attn, grad, base_lr=1e-3)
        delta = np.abs(out.w - attn.w)
        # subtracting w back out costs a few ulps of 1.0, so compare at 1e-9
        assert np.allclose(delta, gamma * np.abs(grad) * 1e-3, rtol=1e-9, atol=0.0)

    def test_frozen_weights_refuse_update(self):
        attn = weights([0.5], frozen=True)
        with pytest.raises(ContractViolation):
            async_update(attn, np.array([1.0]), base_lr=0.1)

    def test_gradient_shape_checked(self):
        with pytest.raises(ContractViolation):
            async_update(weights([1.0]), np.array([1.0, 2.0]), base_lr=0.1)


class TestFusionParsing:
    def test_multitask(self):
        mode = parse_fusion("multitask")
        assert mode.kind == "multitask"
        assert mode.uses_components and mode.learns_attention

    def test_fixed_with_value(self):
        mode = parse_fusion("fixed:0.5")
        assert mode.kind == "fixed"
        assert mode.fixed_value == pytest.approx(0.5)
        assert mode.uses_components and not mode.learns_attention

    def test_concat(self):
        mode = parse_fusion("concat")
        assert mode.uses_components and not mode.learns_attention

    def test_none(self):
        mode = parse_fusion("none")
        assert not mode.uses_components and not mode.learns_attention

    @pytest.mark.parametrize("bad", ["fixed:x", "fixed:", "avg", ""])
    def test_invalid_strings_rejected(self, bad):
        with pytest.raises(ValidationError):
            parse_fusion(bad)
