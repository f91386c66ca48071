import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacmargin.margins import (
    MarginError,
    MarginProfile,
    binary_margin,
    empirical_margin_loss,
    margin_for_target_loss,
    min_positive_margin,
    multiclass_margin,
    multiclass_margins,
)
from pacmargin.numcore import DomainError

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestMargins:
    def test_multiclass(self):
        assert multiclass_margin([0.2, 0.7, 0.1], 1) == pytest.approx(0.5)
        assert multiclass_margin([0.2, 0.7, 0.1], 0) == pytest.approx(-0.5)

    def test_multiclass_rows(self):
        scores = np.array([[0.2, 0.7, 0.1], [1.0, 0.0, 0.5]])
        np.testing.assert_allclose(multiclass_margins(scores, [1, 0]), [0.5, 0.5])

    def test_label_range(self):
        with pytest.raises(DomainError):
            multiclass_margin([0.1, 0.2], 2)
        with pytest.raises(DomainError):
            multiclass_margins(np.zeros((2, 3)), [0, 3])

    def test_binary(self):
        assert binary_margin(0.4, -1) == pytest.approx(-0.4)
        np.testing.assert_allclose(binary_margin(np.array([0.5, -0.5]), np.array([1, -1])), [0.5, 0.5])
        with pytest.raises(DomainError):
            binary_margin(0.4, 0)

    def test_profile_from_scores(self):
        p = MarginProfile.from_scores(np.array([0.5, -0.2]), np.array([1, 1]))
        np.testing.assert_allclose(p.margins, [-0.2, 0.5])
        assert p.m == 2

    def test_profile_read_only(self):
        p = MarginProfile(np.array([0.3, 0.1]))
        with pytest.raises(ValueError):
            p.margins[0] = 1.0

    def test_profile_rejects_nan(self):
        with pytest.raises(DomainError):
            MarginProfile(np.array([np.nan]))


class TestMarginLoss:
    def test_strict_and_conservative(self):
        p = MarginProfile(np.array([0.1, 0.2, 0.2, 0.5]))
        assert empirical_margin_loss(p, 0.2) == 0.25
        assert empirical_margin_loss(p, 0.2, conservative=True) == 0.75

    def test_scaled(self):
        p = MarginProfile(np.array([0.1, 0.3]))
        assert p.scaled(2.0).loss(0.4) == p.loss(0.2)

    @given(arrays(np.float64, st.integers(1, 50), elements=finite), finite, finite)
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_gamma(self, margins, g1, g2):
        p = MarginProfile(margins)
        lo, hi = sorted((g1, g2))
        assert p.loss(lo) <= p.loss(hi)
        assert p.loss(lo) <= p.loss(lo, conservative=True)

    def test_type(self):
        assert isinstance(MarginProfile(np.array([1.0])).loss(0.5), float)


class TestMarginQuantile:
    def test_order_statistic(self):
        p = MarginProfile(np.arange(1, 11) / 10.0)
        # floor(0.2 * 10) + 1 = 3rd smallest
        assert margin_for_target_loss(p, 0.2) == pytest.approx(0.3)
        assert p.loss(0.3) <= 0.2

    @given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0.01, 10.0)), st.floats(0.0, 0.99))
    @settings(max_examples=100, deadline=None)
    def test_meets_target(self, margins, target):
        p = MarginProfile(margins)
        gamma = margin_for_target_loss(p, target)
        assert p.loss(gamma) <= target

    def test_unachievable(self):
        p = MarginProfile(np.array([-1.0, -0.5, 0.2]))
        with pytest.raises(MarginError) as err:
            margin_for_target_loss(p, 0.2)
        assert err.value.kind == "margin-unachievable"

    def test_bad_target(self):
        with pytest.raises(DomainError):
            margin_for_target_loss(MarginProfile(np.array([1.0])), 1.0)

    def test_hard_margin(self):
        assert min_positive_margin(MarginProfile(np.array([0.4, 0.2]))) == 0.2
        with pytest.raises(MarginError) as err:
            min_positive_margin(MarginProfile(np.array([0.4, 0.0])))
        assert err.value.kind == "no-hard-margin"
