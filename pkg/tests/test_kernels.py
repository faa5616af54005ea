import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from croloss.kernels import Kernel, KernelKind, is_admissible

SMOOTH = ["sigmoid", "exponential", "softplus"]
DIFFERENTIABLE = SMOOTH + ["hinge"]
ALL = DIFFERENTIABLE + ["unit_step"]


def k(name, margin=5.0):
    return Kernel.parse(name, margin)


class TestValues:
    def test_examples(self):
        assert k("sigmoid").value(0.0) == 0.5
        assert k("exponential").value(0.0) == 1.0
        assert k("hinge", 5).value(-5.0) == 0.0
        assert k("softplus").value(0.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_unit_step_zero_counts(self):
        assert k("unit_step").value(0.0) == 1.0
        assert k("unit_step").value(-1e-300) == 0.0

    @pytest.mark.parametrize("x", [-1e4, -800.0, -31.0, 31.0, 800.0, 1e4])
    def test_no_overflow(self, x):
        with np.errstate(over="raise", invalid="raise"):
            s = k("sigmoid").value(x)
            sp = k("softplus").value(x)
        assert 0.0 <= s <= 1.0
        assert math.isfinite(sp)
        if x > 30:
            assert sp == x
            assert s == 1.0

    def test_margin_validation(self):
        with pytest.raises(ValueError):
            Kernel(KernelKind.HINGE, -1.0)
        # margin is ignored by the other kinds
        assert Kernel.parse("sigmoid", 3.0).margin == 0.0

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            Kernel.parse("relu")


class TestDerivatives:
    def test_examples(self):
        assert k("sigmoid").deriv(0.0) == 0.25
        assert k("softplus").deriv(0.0) == 0.5

    def test_hinge_derived_example(self):
        # oracle: central difference of the value at 3.7, h = 1e-5
        h = 1e-5
        hinge = k("hinge", 5)
        fd = (hinge.value(3.7 + h) - hinge.value(3.7 - h)) / (2 * h)
        assert fd == pytest.approx(1.0, abs=1e-9)
        assert hinge.deriv(3.7) == 1.0

    def test_hinge_kink_uses_right_subgradient(self):
        assert k("hinge", 5).deriv(-5.0) == 1.0
        assert k("hinge", 5).deriv(-5.0 - 1e-9) == 0.0

    def test_unit_step_rejected(self):
        with pytest.raises(ValueError):
            k("unit_step").deriv(0.3)

    @pytest.mark.parametrize("name", DIFFERENTIABLE)
    def test_against_central_differences(self, name):
        kern = k(name, 5.0)
        h = 1e-5
        x = np.linspace(-20, 20, 4001)
        if name == "hinge":
            x = x[np.abs(x + 5.0) > 2 * h]
        fd = (kern.value(x + h) - kern.value(x - h)) / (2 * h)
        d = kern.deriv(x)
        assert np.max(np.abs(d - fd) / np.maximum(1.0, np.abs(d))) < 1e-5


@pytest.mark.parametrize("name", ALL)
@given(a=st.floats(-60, 60), b=st.floats(-60, 60))
def test_monotone(name, a, b):
    kern = k(name)
    lo, hi = min(a, b), max(a, b)
    assert kern.value(lo) <= kern.value(hi)


class TestAdmissibility:
    @pytest.mark.parametrize("name", ["sigmoid", "exponential", "softplus", "unit_step"])
    def test_pass(self, name):
        rep = is_admissible(k(name))
        assert rep.ok, rep.conditions

    def test_exponential_boundary(self):
        rep = is_admissible(k("exponential"))
        assert rep.phi_zero == 1.0
        assert rep.ok

    def test_small_margin_hinge_fails_iv(self):
        rep = is_admissible(Kernel(KernelKind.HINGE, 0.3))
        assert rep.phi_zero == pytest.approx(0.3)
        assert rep.conditions == {"i": True, "ii": True, "iii": True, "iv": False, "v": True}

    def test_margin_five_hinge(self):
        # phi(0) = 5 breaks the upper bound of condition iv
        rep = is_admissible(k("hinge", 5))
        assert not rep.conditions["iv"]
        assert rep.conditions["v"]
