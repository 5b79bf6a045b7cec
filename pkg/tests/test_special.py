"""Digamma/trigamma accuracy against frozen high-precision references."""

import numpy as np
import pytest

from feduq.autodiff import EULER_MASCHERONI, digamma_value, trigamma_value
from feduq.errors import DomainError

# Reference values computed once with 50-digit arbitrary-precision arithmetic.
DIGAMMA_REFERENCE = {
    0.1: -10.423754940411076232,
    0.5: -1.9635100260214234794,
    1.0: -0.57721566490153286061,
    1.5: 0.036489973978576520559,
    2.0: 0.42278433509846713939,
    3.25: 1.0169909110681790364,
    6.0: 1.7061176684318004727,
    10.0: 2.2517525890667211076,
    123.456: 4.8118293238289854123,
}

TRIGAMMA_REFERENCE = {
    0.1: 101.4332991507927477,
    0.5: 4.9348022005446793094,
    1.0: 1.6449340668482264365,
    1.5: 0.93480220054467930942,
    2.0: 0.64493406684822643647,
    3.25: 0.35979829030957987507,
    6.0: 0.18132295573711532536,
    10.0: 0.10516633568168574612,
    123.456: 0.0081329458342781978071,
}


class TestDigamma:
    def test_reference_values(self):
        for x, ref in DIGAMMA_REFERENCE.items():
            assert digamma_value(x) == pytest.approx(ref, abs=1e-10)

    def test_euler_mascheroni(self):
        assert digamma_value(1.0) == pytest.approx(-EULER_MASCHERONI, abs=1e-10)

    def test_recurrence_identity(self):
        for x in (0.5, 1.0, 2.0, 10.0):
            delta = digamma_value(x + 1.0) - digamma_value(x)
            assert delta == pytest.approx(1.0 / x, abs=1e-10)

    def test_hand_recurrence_value(self):
        assert digamma_value(6.0) - digamma_value(4.0) == pytest.approx(0.45, abs=1e-12)

    def test_domain(self):
        for bad in (0.0, -1.0, -0.5):
            with pytest.raises(DomainError):
                digamma_value(bad)

    def test_vectorized_matches_scalar(self):
        xs = np.array([0.3, 1.7, 9.4])
        vec = digamma_value(xs)
        for i, x in enumerate(xs):
            assert vec[i] == pytest.approx(digamma_value(float(x)), abs=1e-14)


class TestTrigamma:
    def test_reference_values(self):
        for x, ref in TRIGAMMA_REFERENCE.items():
            assert trigamma_value(x) == pytest.approx(ref, rel=1e-10)

    def test_pi_squared_over_six(self):
        assert trigamma_value(1.0) == pytest.approx(np.pi**2 / 6.0, abs=1e-10)

    def test_recurrence_identity(self):
        for x in (0.5, 1.0, 2.0, 10.0):
            delta = trigamma_value(x) - trigamma_value(x + 1.0)
            assert delta == pytest.approx(1.0 / x**2, abs=1e-10)

    def test_is_derivative_of_digamma(self):
        h = 1e-6
        for x in (0.7, 1.3, 4.2, 11.0):
            numeric = (digamma_value(x + h) - digamma_value(x - h)) / (2 * h)
            assert trigamma_value(x) == pytest.approx(numeric, rel=1e-4)

    def test_domain(self):
        with pytest.raises(DomainError):
            trigamma_value(-3.0)
