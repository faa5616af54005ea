import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from croloss.weighting import make_weighting


def log_quad(w, a, b):
    """Integral of the density over [a, b], substituting x = e^t to tame the power law."""
    val, _ = quad(lambda t: w.density(math.exp(t)) * math.exp(t), math.log(a), math.log(b),
                  epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


class TestMakeWeighting:
    def test_uniform(self):
        w = make_weighting(0.0, 9)
        assert w.z == 9
        assert w.density(5.0) == pytest.approx(1 / 9)

    def test_log(self):
        assert make_weighting(1.0, 9).z == pytest.approx(math.log(10))

    def test_alpha_two(self):
        # oracle: integral of x^-2 over [1, 10]
        expected, _ = quad(lambda x: x ** -2, 1, 10)
        assert expected == pytest.approx(0.9)
        assert make_weighting(2.0, 9).z == pytest.approx(expected, rel=1e-14)

    def test_rejects_negative_alpha(self):
        with pytest.raises(ValueError):
            make_weighting(-0.5, 10)

    def test_rejects_empty_catalog(self):
        with pytest.raises(ValueError):
            make_weighting(1.0, 0)


class TestDensity:
    def test_values(self):
        w = make_weighting(1.0, 9)
        assert w.density(1.0) == pytest.approx(1 / math.log(10))
        assert w.density(1.0) == pytest.approx(0.434294, abs=1e-6)
        assert w.density(10.0) == 0.0

    def test_clamps_below_one(self):
        w = make_weighting(1.3, 50)
        assert w.density(0.2) == w.density(1.0)


class TestCdf:
    def test_values(self):
        assert make_weighting(1.0, 9).cdf(10.0) == 1.0
        assert make_weighting(0.0, 9).cdf(5.5) == pytest.approx(0.5)

    def test_log_case_against_quadrature(self):
        w = make_weighting(1.0, 999)
        assert w.cdf(50.0) == pytest.approx(math.log(50) / math.log(1000), rel=1e-14)
        assert w.cdf(50.0) == pytest.approx(0.566323, abs=1e-6)
        assert log_quad(w, 1.0, 50.0) == pytest.approx(w.cdf(50.0), abs=1e-10)

    def test_clamping(self):
        w = make_weighting(0.7, 20)
        assert w.cdf(0.3) == 0.0
        assert w.cdf(1e9) == 1.0

    def test_near_one_continuity(self):
        for n in (2.0, 17.5, 400.0):
            at_one = make_weighting(1.0, 999).cdf(n)
            for a in (1 - 1e-6, 1 + 1e-6):
                assert make_weighting(a, 999).cdf(n) == pytest.approx(at_one, abs=1e-4)

    @settings(max_examples=60, deadline=None)
    @given(alpha=st.floats(0.0, 2.5), size=st.integers(1, 10 ** 5),
           u=st.floats(0, 1), v=st.floats(0, 1))
    def test_antiderivative(self, alpha, size, u, v):
        w = make_weighting(alpha, size)
        a, b = sorted((1 + u * size, 1 + v * size))
        if b - a < 1e-9:
            return
        assert w.cdf(b) - w.cdf(a) == pytest.approx(log_quad(w, a, b), abs=1e-6)

    @given(a1=st.floats(0, 2), a2=st.floats(0, 2), size=st.integers(2, 10 ** 4), u=st.floats(0, 1))
    def test_customizability_ordering(self, a1, a2, size, u):
        lo, hi = sorted((a1, a2))
        n = 1 + u * size
        assert make_weighting(hi, size).cdf(n) >= make_weighting(lo, size).cdf(n) - 1e-12

    @given(alpha=st.floats(0, 2), size=st.integers(1, 1000))
    def test_monotone(self, alpha, size):
        w = make_weighting(alpha, size)
        xs = np.linspace(0.5, size + 2, 500)
        assert np.all(np.diff(w.cdf(xs)) >= 0)
