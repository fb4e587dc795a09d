import numpy as np
import pytest

from netslic.exceptions import IllConditionedError, InputError, NumericDomainError
from netslic.ratios import (estimate_gamma, estimate_rho, ols_residual, realify,
                            tls_complex, tls_realified, tls_residual)
from netslic.synthgen import apply_composite_noise


def bus_profiles(n=600, seed=0):
    """True currents leaving a bus: present branch, residual, previous."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, n)
    i_qs = (1 + 0.6 * t) * (0.8 - 0.25j) * (1 + 0.05 * rng.standard_normal(n))
    i_ql = (0.6 + 0.2 * np.sin(6 * t)) * (0.3 + 0.1j) \
        * (1 + 0.05 * rng.standard_normal(n))
    return -(i_qs + i_ql), i_qs, i_ql


def voltage_profile(n=600, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, n)
    return (1.02 - 0.03 * t) * np.exp(-1j * (0.1 + 0.05 * t)) \
        * (1 + 0.002 * rng.standard_normal(n))


class TestRho:
    def test_identical(self):
        v = voltage_profile(50)
        assert estimate_rho(v, v) == pytest.approx(1 + 0j, abs=1e-15)

    def test_scaled(self):
        v = voltage_profile(50)
        assert estimate_rho(v, v / 0.98) == pytest.approx(0.98, abs=1e-14)

    def test_scale_equivariance(self):
        v = voltage_profile(50)
        w = v * (1.001 - 0.0004j)
        k = 1.0371
        assert estimate_rho(v, k * w) == pytest.approx(estimate_rho(v, w) / k,
                                                       rel=1e-14)

    def test_noisy_monte_carlo(self):
        rho = 1.003 + 0.0005j
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            v = voltage_profile(600, seed)
            v_qp = apply_composite_noise(v, 1.0, 0.001, rng)
            v_qs = apply_composite_noise(v, 1 / rho, 0.001, rng)
            worst = max(worst, abs(estimate_rho(v_qp, v_qs) - rho))
        assert worst <= 5e-4

    def test_errors(self):
        with pytest.raises(NumericDomainError):
            estimate_rho(np.ones(10), np.r_[np.ones(5), -np.ones(5)])
        with pytest.raises(InputError):
            estimate_rho(np.ones(10), np.ones(9))
        with pytest.raises(InputError):
            estimate_rho(np.ones(5), np.ones(5))


class TestGamma:
    def test_perfect(self):
        i_qp, i_qs, i_ql = bus_profiles()
        g, gl = estimate_gamma(i_qp, i_qs, i_ql)
        assert g == pytest.approx(1, abs=1e-10)
        assert gl == pytest.approx(1, abs=1e-10)

    def test_scaled_ct_matches_least_squares(self):
        i_qp, i_qs, i_ql = bus_profiles()
        meas_qs = i_qs / 0.95
        A = np.column_stack([meas_qs, i_ql])
        oracle = np.linalg.lstsq(A, -i_qp, rcond=None)[0]
        assert oracle[0] == pytest.approx(0.95, abs=1e-12)
        g, gl = estimate_gamma(i_qp, meas_qs, i_ql)
        assert abs(g - oracle[0]) <= 1e-10 and abs(gl - oracle[1]) <= 1e-10

    def test_noisy_monte_carlo(self):
        gamma = 1.004
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            i_qp, i_qs, i_ql = bus_profiles(600, seed)
            m_qp = apply_composite_noise(i_qp, 1.0, 0.001, rng)
            m_qs = apply_composite_noise(i_qs, 1 / gamma, 0.001, rng)
            m_ql = apply_composite_noise(i_ql, 1.0, 0.001, rng)
            worst = max(worst, abs(estimate_gamma(m_qp, m_qs, m_ql)[0] - gamma))
        assert worst <= 2e-3

    def test_two_routes_agree(self):
        rng = np.random.default_rng(3)
        i_qp, i_qs, i_ql = bus_profiles(300, 3)
        m = [apply_composite_noise(x, e, 0.001, rng) for x, e in
             ((i_qp, 1.0), (i_qs, 0.997 + 0.002j), (i_ql, 1.004))]
        a = estimate_gamma(*m, method="complex")
        b = estimate_gamma(*m, method="realified")
        assert abs(a[0] - b[0]) <= 1e-8 and abs(a[1] - b[1]) <= 1e-8

    def test_tls_residual_below_ols(self):
        rng = np.random.default_rng(4)
        i_qp, i_qs, i_ql = bus_profiles(300, 4)
        A = np.column_stack([apply_composite_noise(i_qs, 1, 0.01, rng),
                             apply_composite_noise(i_ql, 1, 0.01, rng)])
        b = -apply_composite_noise(i_qp, 1, 0.01, rng)
        assert tls_residual(A, b) <= ols_residual(A, b)

    def test_zero_load_dropped(self):
        i_qp, i_qs, _ = bus_profiles()
        g, gl = estimate_gamma(-i_qs, i_qs, np.zeros_like(i_qs))
        assert g == pytest.approx(1, abs=1e-12) and gl is None

    def test_multiple_residual_columns(self):
        _, i_qs, i_ql = bus_profiles()
        t = np.linspace(0, 1, i_qs.size)
        other = (0.4 - 0.3 * t ** 2) * (0.2 - 0.05j)
        i_qp = -(i_qs + i_ql + other)
        g, gl = estimate_gamma(i_qp, i_qs / 1.002,
                               np.column_stack([i_ql, other / 0.997]))
        assert g == pytest.approx(1.002, abs=1e-10)
        np.testing.assert_allclose(gl, [1.0, 0.997], atol=1e-10)

    def test_collinear_profiles(self):
        _, i_qs, _ = bus_profiles()
        with pytest.raises(IllConditionedError) as err:
            estimate_gamma(-3 * i_qs, i_qs, 2 * i_qs, bus=7)
        assert err.value.bus == 7


def test_realify_matches_complex_product(rng):
    M = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    x = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    y = realify(M) @ np.r_[x.real, x.imag]
    np.testing.assert_allclose(y[:5] + 1j * y[5:], M @ x, atol=1e-14)


def test_tls_routes_on_generic_problem(rng):
    A = rng.standard_normal((40, 3)) + 1j * rng.standard_normal((40, 3))
    x = np.array([1 + 0.1j, -0.5j, 2.0])
    b = A @ x + 0.01 * (rng.standard_normal(40) + 1j * rng.standard_normal(40))
    np.testing.assert_allclose(tls_complex(A, b), tls_realified(A, b), atol=1e-10)
