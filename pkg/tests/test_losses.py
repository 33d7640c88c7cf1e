import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from supportneeds.errors import ConfigError, NumericalError
from supportneeds.losses import (
    LossWeights,
    label_loss,
    masked_label_loss,
    quality_loss,
    total_loss,
    unlabeled_loss,
)


def t(values, dtype=torch.float64):
    return torch.tensor(values, dtype=dtype)


class TestLabelLoss:
    def test_perfect_prediction_is_near_zero(self):
        y = t([[1.0, 0.0, 0.0]])
        assert float(label_loss(y, y.clone())) < 1e-5

    def test_hand_computed_value(self):
        # independent scalar oracle: -(ln 0.8 + ln 0.7 + ln 0.7)
        expected = -(math.log(0.8) + math.log(1 - 0.3) + math.log(1 - 0.3))
        value = float(label_loss(t([[1, 0, 0]]), t([[0.8, 0.3, 0.3]])))
        assert abs(value - expected) < 1e-12
        assert abs(value - 0.9365) < 5e-5

    def test_maximum_uncertainty(self):
        value = float(label_loss(t([[1, 0, 0]]), t([[0.5, 0.5, 0.5]])))
        assert abs(value - 3 * math.log(2)) < 1e-12
        value = float(label_loss(t([[0, 1, 1]]), t([[0.5, 0.5, 0.5]])))
        assert abs(value - 3 * math.log(2)) < 1e-12

    def test_mean_over_samples(self):
        one = float(label_loss(t([[1, 0, 0]]), t([[0.8, 0.3, 0.3]])))
        two = float(
            label_loss(
                t([[1, 0, 0], [1, 0, 0]]), t([[0.8, 0.3, 0.3], [0.8, 0.3, 0.3]])
            )
        )
        assert abs(one - two) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            label_loss(t([[1, 0]]), t([[0.5, 0.5, 0.5]]))


class TestUnlabeledLoss:
    def test_nothing_passes_the_gate(self):
        value = float(unlabeled_loss(t([[0.6, 0.6, 0.6]]), tau=0.7))
        assert value == 0.0

    def test_confident_positive(self):
        value = float(unlabeled_loss(t([[0.95]]), tau=0.9))
        assert abs(value - (-math.log(0.95))) < 1e-12

    def test_confident_negative_by_symmetry(self):
        value = float(unlabeled_loss(t([[0.05]]), tau=0.9))
        assert abs(value - (-math.log(0.95))) < 1e-12

    def test_tau_at_or_below_half_is_config_error(self):
        with pytest.raises(ConfigError, match="tau"):
            unlabeled_loss(t([[0.9]]), tau=0.5)
        with pytest.raises(ConfigError, match="tau"):
            unlabeled_loss(t([[0.9]]), tau=0.3)

    def test_no_gradient_through_targets(self):
        p = t([[0.95]]).requires_grad_(True)
        loss = unlabeled_loss(p, tau=0.9)
        loss.backward()
        # d/dp of -log(p) with a constant target is -1/p
        assert abs(float(p.grad[0, 0]) - (-1 / 0.95)) < 1e-9

    def test_mean_over_all_samples_including_gated_out(self):
        # one confident sample, one not: mean halves the confident term
        both = float(unlabeled_loss(t([[0.95], [0.6]]), tau=0.9))
        assert abs(both - 0.5 * (-math.log(0.95))) < 1e-12


class TestQualityLoss:
    def test_best_already_max_is_zero(self):
        value = float(quality_loss(t([[0.5, 0.3, 0.2]]), t([[1.0, 0, 0]])))
        assert value == 0.0

    def test_hand_computed_penalty(self):
        value = float(quality_loss(t([[0.2, 0.5, 0.3]]), t([[1.0, 0, 0]])))
        assert abs(value - 0.09) < 1e-12

    def test_no_best_flag_contributes_zero(self):
        value = float(quality_loss(t([[0.2, 0.5, 0.3]]), t([[0.0, 0, 0]])))
        assert value == 0.0

    def test_tie_counts_as_attaining(self):
        value = float(quality_loss(t([[0.5, 0.5]]), t([[1.0, 0.0]])))
        assert value == 0.0

    def test_mean_over_samples_includes_zero_contributors(self):
        weights = t([[0.2, 0.5, 0.3], [0.6, 0.2, 0.2]])
        flags = t([[1.0, 0, 0], [1.0, 0, 0]])
        assert abs(float(quality_loss(weights, flags)) - 0.045) < 1e-12

    def test_padded_answers_masked_out_of_max(self):
        weights = t([[0.4, 0.6, 0.0]])
        flags = t([[1.0, 0.0, 0.0]])
        mask = torch.tensor([[True, True, False]])
        value = float(quality_loss(weights, flags, mask))
        assert abs(value - (0.4 - 0.6) ** 2) < 1e-12


class TestMaskedLabelLoss:
    def test_mask_excludes_classes(self):
        y = t([[1, 0, 0]])
        p = t([[0.8, 0.3, 0.3]])
        full = float(masked_label_loss(y, t([[1, 1, 1]]), p))
        only_first = float(masked_label_loss(y, t([[1, 0, 0]]), p))
        assert abs(full - 0.9364933) < 1e-6
        assert abs(only_first - (-math.log(0.8))) < 1e-12


class TestTotalLoss:
    def test_all_zero_weights(self):
        b = total_loss(t(2.0), t(4.0), t(10.0), LossWeights(0, 0, 0))
        assert float(b.total) == 0.0

    def test_label_only(self):
        b = total_loss(t(2.0), t(4.0), t(10.0), LossWeights(1, 0, 0))
        assert float(b.total) == 2.0

    def test_weighted_sum(self):
        b = total_loss(t(2.0), t(4.0), t(10.0), LossWeights(1, 0.5, 0.1))
        assert abs(float(b.total) - 5.0) < 1e-12

    def test_non_finite_raises(self):
        with pytest.raises(NumericalError):
            total_loss(t(float("nan")), t(0.0), t(0.0), LossWeights())

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_label=-0.1)

    @settings(max_examples=100, deadline=None)
    @given(
        st.tuples(*[st.floats(0, 10) for _ in range(3)]),
        st.tuples(*[st.floats(0, 5) for _ in range(3)]),
    )
    def test_breakdown_invariant(self, parts, lambdas):
        b = total_loss(
            t(parts[0]), t(parts[1]), t(parts[2]),
            LossWeights(*lambdas),
        )
        expected = (
            lambdas[0] * parts[0] + lambdas[1] * parts[1] + lambdas[2] * parts[2]
        )
        assert abs(float(b.total) - expected) < 1e-9
