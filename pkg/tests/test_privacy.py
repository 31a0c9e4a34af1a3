import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from dpsynth.exceptions import EmptyState, InvalidParams, Unachievable
from dpsynth.privacy import (
    AccountantState,
    GaussianMech,
    PrivacySpec,
    add_gaussian_noise,
    calibrate_gaussian,
    calibrate_noise_multiplier,
    gaussian_epsilon,
    rdp_per_step,
    rdp_subsampled_gaussian,
    rdp_to_eps,
    split_budget,
)


def quad_log_a(q, sigma, alpha):
    """log E_{z~N(0,s^2)}[((1-q) + q * N(1,s^2)(z)/N(0,s^2)(z))^alpha] by quadrature.

    The integrand peaks near z = alpha, so it is rescaled by its maximum on
    a grid and integrated over a window wide enough to hold all the mass.
    """

    def log_f(z):
        log_ratio = (2 * z - 1) / (2 * sigma**2)
        return stats.norm.logpdf(z, 0, sigma) + alpha * np.logaddexp(math.log1p(-q), math.log(q) + log_ratio)

    lo, hi = -40 * sigma - 1, alpha + 40 * sigma + 1
    grid = np.linspace(lo, hi, 20001)
    peak = float(np.max(log_f(grid)))
    z_peak = float(grid[np.argmax(log_f(grid))])
    val, _ = integrate.quad(lambda z: math.exp(log_f(z) - peak), lo, hi, points=[0.0, z_peak], limit=500, epsabs=0, epsrel=1e-12)
    return peak + math.log(val)


class TestGaussian:
    def test_reference_value(self):
        assert calibrate_gaussian(1, 1, 1e-5) == pytest.approx(4.8447, abs=1e-3)

    def test_closed_form(self):
        assert calibrate_gaussian(2.0, 0.5, 1e-6) == pytest.approx(math.sqrt(2 * math.log(1.25e6)) * 4.0)

    def test_inf_and_zero_sensitivity(self):
        assert calibrate_gaussian(1, math.inf, 1e-5) == 0.0
        assert calibrate_gaussian(0, 1.0, 1e-5) == 0.0

    @pytest.mark.parametrize("args", [(-1, 1, 1e-5), (1, 0, 1e-5), (1, 1, 0), (1, 1, 1), (1, -2, 0.1)])
    def test_invalid(self, args):
        with pytest.raises(InvalidParams):
            calibrate_gaussian(*args)

    @given(st.floats(0.01, 100), st.floats(1e-9, 0.5), st.floats(0.1, 10))
    def test_inverse(self, eps, delta, sens):
        sigma = calibrate_gaussian(sens, eps, delta)
        assert gaussian_epsilon(sens, sigma, delta) == pytest.approx(eps, rel=1e-12)

    def test_noise_statistics(self, rng):
        mech = GaussianMech.calibrated(1.0, 1.0, 1e-5)
        x = mech(np.zeros(200_000), rng)
        assert x.std() == pytest.approx(4.8447, rel=0.01)
        assert abs(x.mean()) < 0.05

    def test_zero_sigma_copy(self, rng):
        v = np.array([1.0, 2.0])
        out = add_gaussian_noise(v, 0.0, rng)
        np.testing.assert_array_equal(out, v)
        assert out is not v


class TestPrivacySpec:
    def test_validation(self):
        assert not PrivacySpec().is_private
        assert PrivacySpec(5.0).is_private
        with pytest.raises(InvalidParams):
            PrivacySpec(0.0)
        with pytest.raises(InvalidParams):
            PrivacySpec(1.0, 1.0)


class TestSplitBudget:
    def test_ratio(self):
        np.testing.assert_allclose(split_budget(9.0, [1, 8]), [1.0, 8.0])

    def test_inf(self):
        assert np.all(np.isinf(split_budget(math.inf, [1, 2])))

    @given(st.floats(0.01, 1e3), st.lists(st.floats(0.01, 10), min_size=1, max_size=20))
    def test_sums(self, eps, w):
        assert math.fsum(split_budget(eps, w)) == pytest.approx(eps, rel=1e-12)

    def test_bad_weights(self):
        with pytest.raises(InvalidParams):
            split_budget(1.0, [1, 0])


class TestRdp:
    def test_full_batch_closed_form(self):
        orders = (2, 3, 10)
        np.testing.assert_array_equal(rdp_per_step(1.0, 2.0, orders), np.array(orders) / 8.0)

    @pytest.mark.parametrize("q,sigma", [(0.01, 1.0), (0.05, 0.8), (0.2, 1.5), (0.5, 2.0), (0.067, 1.1)])
    @pytest.mark.parametrize("alpha", [2, 3, 8, 16])
    def test_matches_quadrature(self, q, sigma, alpha):
        got = rdp_per_step(q, sigma, (alpha,))[0] * (alpha - 1)
        want = quad_log_a(q, sigma, alpha)
        assert got == pytest.approx(want, rel=1e-7, abs=1e-12)

    def test_reference_epsilon_one_step(self):
        eps, order = rdp_to_eps(rdp_subsampled_gaussian(1.0, 1.0, 1), 1e-5)
        assert 5.30 <= eps <= 5.60
        assert order == 6

    def test_composition_additive_exactly(self):
        a = rdp_subsampled_gaussian(0.1, 1.0, 3)
        b = rdp_subsampled_gaussian(0.1, 1.0, 4)
        c = rdp_subsampled_gaussian(0.1, 1.0, 7)
        ab = a + b
        np.testing.assert_array_equal(ab.rdp, a.rdp + b.rdp)
        np.testing.assert_allclose(ab.rdp, c.rdp, rtol=1e-14)
        assert ab.steps == 7

    def test_amplification_grid(self):
        full = {}
        for q in np.linspace(0.01, 1.0, 10):
            for sigma in np.linspace(0.5, 5.0, 10):
                sub = rdp_per_step(q, sigma)
                if sigma not in full:
                    full[sigma] = rdp_per_step(1.0, sigma)
                assert np.all(sub <= full[sigma] + 1e-12)

    @given(st.floats(0.001, 0.99), st.floats(0.3, 10.0))
    def test_monotone_in_q_and_sigma(self, q, sigma):
        base = rdp_per_step(q, sigma)
        assert np.all(rdp_per_step(min(1.0, q * 1.5), sigma) >= base - 1e-12)
        assert np.all(rdp_per_step(q, sigma * 1.5) <= base + 1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidParams):
            rdp_per_step(0.0, 1.0)
        with pytest.raises(InvalidParams):
            rdp_per_step(0.5, 0.0)
        with pytest.raises(InvalidParams):
            rdp_per_step(0.5, 1.0, (2.5,))
        with pytest.raises(InvalidParams):
            rdp_subsampled_gaussian(0.5, 1.0, 0)

    def test_state_validation(self):
        with pytest.raises(InvalidParams):
            AccountantState((2, 3), np.array([1.0]))
        with pytest.raises(EmptyState):
            rdp_to_eps(AccountantState((), np.zeros(0)), 1e-5)
        with pytest.raises(InvalidParams):
            AccountantState((2,), np.zeros(1)) + AccountantState((3,), np.zeros(1))

    def test_to_dict(self):
        d = rdp_subsampled_gaussian(0.5, 1.0, 2, (2, 4)).to_dict()
        assert d["orders"] == [2, 4] and d["steps"] == 2 and len(d["rdp"]) == 2


class TestCalibrate:
    @pytest.mark.parametrize("eps", [1.0, 5.0, 20.0, 100.0])
    def test_hits_target(self, eps):
        q, steps, delta = 64 / 960, 2000, 1e-5
        sigma = calibrate_noise_multiplier(q, steps, eps, delta)
        got = rdp_subsampled_gaussian(q, sigma, steps).epsilon(delta)
        assert 0.99 * eps <= got <= eps

    def test_inf(self):
        assert calibrate_noise_multiplier(0.1, 10, math.inf, 1e-5) == 0.0

    def test_unachievable(self):
        with pytest.raises(Unachievable):
            calibrate_noise_multiplier(1.0, 10**6, 1e-4, 1e-5, max_sigma=10.0)
