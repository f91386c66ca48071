import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacmargin.numcore import (
    DomainError,
    KlPair,
    bernoulli_kl,
    categorical_entropy,
    entropy_pm1,
    erf,
    frobenius_sq,
    kl_inverse_upper,
    matrix_norms,
    phi_c,
    phi_c_inverse,
    spectral_norm,
)

rates = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def _mp_kl(q, p):
    with mpmath.workdps(50):
        q, p = mpmath.mpf(q), mpmath.mpf(p)
        first = q * mpmath.log(q / p) if q > 0 else 0
        second = (1 - q) * (mpmath.log1p(-q) - mpmath.log1p(-p)) if q < 1 else 0
        return float(first + second)


class TestBernoulliKl:
    def test_reference_value(self):
        # mpmath at 30 digits: 0.1163217565860045002...
        assert bernoulli_kl(0.1, 0.3) == pytest.approx(0.1163217565860045, rel=1e-12)

    def test_one_sided(self):
        assert bernoulli_kl(0.3, 0.1) == 0.0
        assert bernoulli_kl(0.4, 0.4) == 0.0

    def test_boundaries(self):
        assert bernoulli_kl(0.0, 0.5) == pytest.approx(math.log(2.0))
        assert math.isinf(bernoulli_kl(0.5, 1.0))
        assert bernoulli_kl(1.0, 1.0) == 0.0

    def test_vectorised(self):
        out = bernoulli_kl(np.array([0.1, 0.2]), 0.3)
        assert out.shape == (2,)

    def test_domain(self):
        with pytest.raises(DomainError):
            bernoulli_kl(-0.1, 0.5)
        with pytest.raises(DomainError):
            bernoulli_kl(0.2, float("nan"))

    @given(q=rates, p=rates)
    @settings(max_examples=300, deadline=None)
    def test_matches_mpmath(self, q, p):
        if p <= q:
            assert bernoulli_kl(q, p) == 0.0
        elif p == 1.0 and q < 1.0:
            assert math.isinf(bernoulli_kl(q, p))
        else:
            expected = _mp_kl(q, p)
            assert bernoulli_kl(q, p) == pytest.approx(expected, rel=1e-9, abs=1e-300)

    @given(q=rates, p=rates)
    @settings(max_examples=300, deadline=None)
    def test_pinsker(self, q, p):
        if p > q:
            assert bernoulli_kl(q, p) >= 2.0 * (p - q) ** 2 - 1e-15

    def test_kl_pair(self):
        assert KlPair(0.1, 0.3).kl == bernoulli_kl(0.1, 0.3)
        with pytest.raises(DomainError):
            KlPair(1.5, 0.3)


class TestKlInverse:
    def test_reference_value(self):
        # kl(0 : p) = -log(1 - p), so the inverse is 1 - e^{-budget}
        assert kl_inverse_upper(0.0, 0.1) == pytest.approx(-math.expm1(-0.1), abs=1e-12)

    def test_special_cases(self):
        assert kl_inverse_upper(0.3, 0.0) == 0.3
        assert kl_inverse_upper(1.0, 5.0) == 1.0
        assert kl_inverse_upper(0.2, math.inf) == 1.0

    def test_negative_budget(self):
        with pytest.raises(DomainError):
            kl_inverse_upper(0.2, -1e-3)

    @given(q=st.floats(0.0, 0.999), budget=st.floats(1e-6, 5.0))
    @settings(max_examples=200, deadline=None)
    def test_defining_property(self, q, budget):
        p = kl_inverse_upper(q, budget)
        assert q <= p <= 1.0
        if p < 1.0:
            assert bernoulli_kl(q, p) >= budget * (1 - 1e-12)
            below = np.nextafter(p, 0.0)
            below = math.nextafter(below, 0.0)
            assert bernoulli_kl(q, max(q, below)) <= budget * (1 + 1e-9)

    @given(q=st.floats(0.0, 0.9), b1=st.floats(1e-4, 2.0), b2=st.floats(1e-4, 2.0))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_budget(self, q, b1, b2):
        lo, hi = sorted((b1, b2))
        assert kl_inverse_upper(q, lo) <= kl_inverse_upper(q, hi)


class TestPhiC:
    def test_reference_value(self):
        # (1 - e^{-1}) / (1 - e^{-2}) = 1 / (1 + e^{-1})
        assert phi_c_inverse(0.5, 2.0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), rel=1e-14)

    @given(p=rates, c=st.floats(0.01, 20.0))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, p, c):
        assert phi_c_inverse(phi_c(p, c), c) == pytest.approx(p, abs=1e-12)

    def test_bad_c(self):
        with pytest.raises(DomainError):
            phi_c(0.5, 0.0)


class TestErf:
    def test_reference_values(self):
        assert erf(1.0) == pytest.approx(0.8427007929497149, abs=1e-15)
        assert erf(1.0 / math.sqrt(2.0)) == pytest.approx(0.6826894921370859, abs=1e-15)
        assert erf(0.0) == 0.0

    def test_against_mpmath(self):
        xs = np.linspace(-7.0, 7.0, 1401)
        expected = np.array([float(mpmath.erf(x)) for x in xs])
        np.testing.assert_allclose(erf(xs), expected, rtol=0, atol=1e-14)

    def test_odd(self):
        xs = np.linspace(0, 5, 101)
        np.testing.assert_array_equal(erf(-xs), -erf(xs))

    def test_scalar_type(self):
        assert isinstance(erf(0.3), float)


class TestEntropyPm1:
    def test_reference_value(self):
        expected = 0.5 * (1.5 * math.log(1.5) + 0.5 * math.log(0.5))
        assert entropy_pm1(0.5) == pytest.approx(expected, rel=1e-14)

    def test_endpoints(self):
        assert entropy_pm1(0.0) == 0.0
        assert entropy_pm1(1.0) == pytest.approx(math.log(2.0))
        assert entropy_pm1(-1.0) == pytest.approx(math.log(2.0))

    def test_domain(self):
        with pytest.raises(DomainError):
            entropy_pm1(1.01)

    @given(x=st.floats(-1.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_quadratic_upper_bound(self, x):
        assert entropy_pm1(x) <= x * x * math.log(2.0) + 1e-15


class TestCategoricalEntropy:
    def test_uniform(self):
        assert categorical_entropy(np.full(4, 0.25)) == pytest.approx(math.log(4.0))

    def test_point_mass(self):
        assert categorical_entropy([0.0, 1.0, 0.0]) == 0.0

    def test_not_normalised(self):
        with pytest.raises(DomainError):
            categorical_entropy([0.5, 0.4])


class TestMatrixNorms:
    def test_diagonal(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-12)

    def test_zero(self):
        assert spectral_norm(np.zeros((3, 2))) == 0.0

    def test_against_svd(self):
        rng = np.random.default_rng(3)
        for shape in [(5, 3), (3, 7), (16, 16), (1, 4)]:
            w = rng.standard_normal(shape)
            assert spectral_norm(w) == pytest.approx(np.linalg.norm(w, 2), rel=1e-9)

    def test_repeated_top_singular_value(self):
        assert spectral_norm(np.eye(6) * 2.5) == pytest.approx(2.5, rel=1e-12)

    def test_nonfinite(self):
        with pytest.raises(DomainError):
            spectral_norm(np.array([[np.inf]]))

    def test_frobenius_exact_under_scaling(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((7, 5))
        assert frobenius_sq(4.0 * w) == 16.0 * frobenius_sq(w)

    def test_matrix_norms(self):
        n = matrix_norms(np.array([[1.0, -2.0], [0.0, 2.0]]))
        assert n.frobenius == pytest.approx(3.0)
        assert n.l1 == 5.0
        assert n.linf == 2.0
