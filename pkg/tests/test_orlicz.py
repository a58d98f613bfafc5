import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from kacanov.orlicz import (
    A_eps,
    Exponent,
    RelaxInterval,
    V_eps,
    kappa,
    phi,
    phi_prime,
    truncate,
)

EPS = RelaxInterval(0.1, 10.0)

# max(1/min, max) of the A-V ratio found by scanning p in {1.1, 1.5, 2},
# |P|, |Q| in [1e-6, 1e3] and seven intervals; observed 0.3307 .. 1.4442
AV_BAND = 3.05

positive = st.floats(1e-4, 1e4)
exponents = st.floats(1.01, 2.0)


@st.composite
def intervals(draw):
    a, b = sorted([draw(positive), draw(positive)])
    return RelaxInterval(a, b)


class TestTypes:
    def test_exponent_range(self):
        assert Exponent(1.5).p == 1.5
        assert Exponent(2).p == 2.0
        for bad in (1.0, 0.5, 2.5, float("nan")):
            with pytest.raises(ValueError):
                Exponent(bad)

    def test_unchecked_exponent_allows_large_p(self):
        assert Exponent.unchecked(3.0).p == 3.0
        with pytest.raises(ValueError):
            Exponent.unchecked(1.0)

    def test_interval_validation(self):
        with pytest.raises(ValueError):
            RelaxInterval(0.0, 1.0)
        with pytest.raises(ValueError):
            RelaxInterval(2.0, 1.0)
        RelaxInterval(1.0, 1.0)

    def test_contains(self):
        big, small = RelaxInterval(0.1, 10), RelaxInterval(0.5, 2)
        assert big.contains(small)
        assert not small.contains(big)
        assert big.contains(big)
        assert not RelaxInterval(0.2, 10).contains(RelaxInterval(0.1, 5))


class TestTruncate:
    @pytest.mark.parametrize("a, expected", [(0, 0.1), (1, 1), (50, 10)])
    def test_examples(self, a, expected):
        assert truncate(a, EPS) == expected

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            truncate(-1.0, EPS)

    def test_array(self):
        np.testing.assert_array_equal(truncate(np.array([0.0, 1.0, 50.0]), EPS), [0.1, 1.0, 10.0])


class TestKappa:
    def test_lower_branch(self):
        assert kappa(0, EPS, 1.5) == pytest.approx((1 / 1.5 - 0.5) * 0.1**1.5, rel=1e-14)
        assert kappa(0, EPS, 1.5) == pytest.approx(5.2705e-3, rel=1e-4)

    def test_middle_branch(self):
        assert kappa(1, EPS, 1.5) == pytest.approx(1 / 1.5, rel=1e-15)

    def test_upper_branch_hand_value(self):
        # 0.5 * 10**-0.5 * 400 = 63.245553203367585, (1/1.5 - 0.5) * 10**1.5 = 5.270462766947299
        assert kappa(20, EPS, 1.5) == pytest.approx(68.51601597031488, rel=1e-14)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            kappa(-0.1, EPS, 1.5)

    @pytest.mark.parametrize("p", [1.1, 1.5, 2.0])
    @pytest.mark.parametrize("bp", [0.1, 10.0])
    def test_c1_at_breakpoints(self, p, bp):
        h = 1e-7
        left, mid, right = kappa(np.array([bp - h, bp, bp + h]), EPS, p)
        assert left == pytest.approx(mid, abs=1e-6)
        assert right == pytest.approx(mid, abs=1e-6)
        # one-sided slopes agree with phi'(bp) = bp^(p-1)
        assert (mid - left) / h == pytest.approx(bp ** (p - 1), rel=1e-5)
        assert (right - mid) / h == pytest.approx(bp ** (p - 1), rel=1e-5)

    def test_breakpoints_use_power_branch(self):
        assert kappa(0.1, EPS, 1.5) == 0.1**1.5 / 1.5
        assert kappa(10.0, EPS, 1.5) == 10.0**1.5 / 1.5

    def test_dominates_power_law_on_grid(self):
        t = np.logspace(-8, 8, 801)
        for p in (1.1, 1.5, 1.9, 2.0):
            for lo, hi in [(1e-3, 1e3), (0.1, 10), (1, 1), (1e-6, 1e-2), (5, 1e4)]:
                eps = RelaxInterval(lo, hi)
                assert np.all(kappa(t, eps, p) >= t**p / p * (1 - 1e-14))

    @given(t=st.floats(0, 1e6), e1=intervals(), p=exponents, widen=st.floats(1.0, 100.0))
    def test_wider_interval_lowers_kappa(self, t, e1, p, widen):
        e2 = RelaxInterval(e1.eps_minus / widen, e1.eps_plus * widen)
        assert e2.contains(e1)
        assert kappa(t, e2, p) <= kappa(t, e1, p) * (1 + 1e-12)

    def test_argmin_over_weights_is_truncation(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            lo = 10 ** rng.uniform(-3, 0)
            hi = lo * 10 ** rng.uniform(0, 4)
            eps = RelaxInterval(lo, hi)
            p = rng.uniform(1.05, 2.0)
            t = 10 ** rng.uniform(-4, 4)
            a = np.linspace(lo, hi, 1000)
            vals = 0.5 * a ** (p - 2) * t**2 + (1 / p - 0.5) * a**p
            a_star = truncate(t, eps)
            at_star = 0.5 * a_star ** (p - 2) * t**2 + (1 / p - 0.5) * a_star**p
            assert at_star <= vals.min() * (1 + 1e-12) + 1e-300
            assert at_star == pytest.approx(kappa(t, eps, p), rel=1e-12)
            # the grid minimizer sits next to the truncation
            spacing = (hi - lo) / 999
            assert abs(a[np.argmin(vals)] - a_star) <= spacing + 1e-12 * hi


class TestPhi:
    def test_zero(self):
        assert phi(0, EPS, 1.5) == 0.0
        assert phi(0, RelaxInterval(3, 7), 1.2) == 0.0

    def test_value_at_lower_breakpoint_by_quadrature(self):
        integral, _ = quad(lambda s: phi_prime(s, EPS, 1.5), 0.0, 0.1, epsabs=1e-15)
        assert phi(0.1, EPS, 1.5) == pytest.approx(integral, rel=1e-12)
        assert phi(0.1, EPS, 1.5) == pytest.approx(0.5 * 0.1**1.5, rel=1e-13)
        assert phi(0.1, EPS, 1.5) == pytest.approx(1.5811e-2, rel=1e-4)

    @pytest.mark.parametrize("t", [0.03, 0.5, 7.0, 40.0])
    def test_phi_is_integral_of_phi_prime(self, t):
        pts = [s for s in (0.1, 10.0) if s < t]
        integral, _ = quad(lambda s: phi_prime(s, EPS, 1.3), 0.0, t, points=pts or None, epsabs=1e-14)
        assert phi(t, EPS, 1.3) == pytest.approx(integral, rel=1e-10)

    def test_delta2_on_log_grid(self):
        t = np.logspace(-6, 6, 2401)
        for p in (1.01, 1.3, 1.5, 1.8, 2.0):
            for lo, hi in [(1e-3, 1e3), (0.1, 10), (1, 1), (1e-5, 1e5), (2, 3)]:
                eps = RelaxInterval(lo, hi)
                assert np.all(phi(2 * t, eps, p) <= 4 * phi(t, eps, p) * (1 + 1e-12))

    def test_strictly_increasing_and_convex(self):
        t = np.linspace(0, 20, 4001)
        for p in (1.2, 1.9):
            vals = phi(t, EPS, p)
            assert np.all(np.diff(vals) > 0)
            assert np.all(np.diff(vals, 2) >= -1e-15)


class TestPhiPrime:
    def test_examples(self):
        assert phi_prime(0, EPS, 1.5) == 0.0
        assert phi_prime(1, EPS, 1.5) == 1.0
        assert phi_prime(0.05, EPS, 1.5) == pytest.approx(0.1**-0.5 * 0.05, rel=1e-15)
        assert phi_prime(0.05, EPS, 1.5) == pytest.approx(0.1581, rel=1e-3)

    def test_matches_finite_difference(self):
        t = np.concatenate([np.linspace(0.005, 0.095, 30), np.linspace(0.11, 9.9, 60), np.linspace(10.2, 500, 30)])
        for p in (1.1, 1.5, 2.0):
            h = 1e-5 * np.maximum(t, 1e-2)
            # keep the stencil off the breakpoints
            assert np.all((np.abs(t - 0.1) > h) & (np.abs(t - 10) > h))
            fd = (phi(t + h, EPS, p) - phi(t - h, EPS, p)) / (2 * h)
            np.testing.assert_allclose(fd, phi_prime(t, EPS, p), rtol=1e-6)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            phi_prime(-2.0, EPS, 1.5)


class TestFluxes:
    def test_zero_vector(self):
        np.testing.assert_array_equal(A_eps(np.zeros(2), EPS, 1.5), [0.0, 0.0])
        np.testing.assert_array_equal(V_eps(np.zeros(2), EPS, 1.5), [0.0, 0.0])

    def test_interior_branch(self):
        P = np.array([0.6, -0.8]) * 2.5
        np.testing.assert_allclose(A_eps(P, EPS, 1.5), 2.5**-0.5 * P, rtol=1e-15)
        np.testing.assert_allclose(V_eps(P, EPS, 1.5), 2.5**-0.25 * P, rtol=1e-15)

    def test_A_is_phi_prime_along_direction(self):
        rng = np.random.default_rng(1)
        P = rng.normal(size=(50, 2)) * 10 ** rng.uniform(-3, 3, (50, 1))
        r = np.linalg.norm(P, axis=1)
        np.testing.assert_allclose(np.linalg.norm(A_eps(P, EPS, 1.4), axis=1), phi_prime(r, EPS, 1.4), rtol=1e-13)

    def test_monotone(self):
        rng = np.random.default_rng(2)
        for p in (1.1, 1.5, 2.0):
            P = rng.normal(size=(10_000, 2)) * 10 ** rng.uniform(-3, 2, (10_000, 1))
            Q = rng.normal(size=(10_000, 2)) * 10 ** rng.uniform(-3, 2, (10_000, 1))
            inner = np.sum((A_eps(P, EPS, p) - A_eps(Q, EPS, p)) * (P - Q), axis=1)
            assert np.all(inner >= -1e-12 * np.sum((P - Q) ** 2, axis=1))

    def test_av_band_independent_of_interval(self):
        rng = np.random.default_rng(3)
        N = 20_000
        lo_all, hi_all = np.inf, 0.0
        for p in (1.1, 1.5, 2.0):
            for lo, hi in [(1e-3, 1e3), (0.1, 10), (1e-6, 1e-3), (0.5, 2), (10, 100), (1e-2, 1e6)]:
                eps = RelaxInterval(lo, hi)
                rP = 10 ** rng.uniform(-6, 3, N)
                rQ = 10 ** rng.uniform(-6, 3, N)
                rP[:100] = 0.0
                th = rng.uniform(0, 2 * np.pi, (N, 2))
                P = np.column_stack([rP * np.cos(th[:, 0]), rP * np.sin(th[:, 0])])
                Q = np.column_stack([rQ * np.cos(th[:, 1]), rQ * np.sin(th[:, 1])])
                num = np.sum((A_eps(P, eps, p) - A_eps(Q, eps, p)) * (P - Q), axis=1)
                den = np.sum((V_eps(P, eps, p) - V_eps(Q, eps, p)) ** 2, axis=1)
                ok = den > 0
                ratio = num[ok] / den[ok]
                lo_all, hi_all = min(lo_all, ratio.min()), max(hi_all, ratio.max())
        assert 1 / AV_BAND <= lo_all and hi_all <= AV_BAND
        # ratios spread well away from 1 on both sides, so the band is not vacuous
        assert lo_all < 0.5 and hi_all > 1.2


@settings(max_examples=200)
@given(t=st.floats(0, 1e5), eps=intervals(), p=exponents)
def test_kappa_equals_phi_plus_offset(t, eps, p):
    assert kappa(t, eps, p) == pytest.approx(phi(t, eps, p) + kappa(0, eps, p), rel=1e-12, abs=1e-300)
    assert math.isfinite(kappa(t, eps, p))
