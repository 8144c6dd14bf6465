import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funcgan.errors import InfeasibleAlpha, InvalidLoss
from funcgan.lgan import (LganCoefficients, LossSpec, coefficients_from_losses, lgan_eigenvalues,
                          max_real_part, optimal_parameters, spectral_abscissa)

pos = st.floats(1e-3, 1e3)
nonneg = st.floats(0.0, 1e2)
beta_st = st.floats(0.05, 20.0).flatmap(lambda b: st.sampled_from([b, -b]))


def test_lsgan_coefficients():
    # phi1 = (x-1)^2/2, phi2 = (x+1)^2/2
    c = coefficients_from_losses(LossSpec(phi1_d2=1.0, phi2_d2=1.0, phi2_d1=1.0))
    assert (c.alpha, c.beta, c.gamma) == (1.0, 1.0, 0.0)


def test_wgan_like_coefficients():
    c = coefficients_from_losses(LossSpec(0.0, 0.0, 1.0), gamma=3.0)
    assert (c.alpha, c.beta, c.gamma) == (0.0, 1.0, 3.0)


def test_strictly_from_derivatives():
    # phi1 = a/2 x^2 + b x, phi2 = -b x with (a, b) = (0.25, -0.5)
    c = coefficients_from_losses(LossSpec(phi1_d2=0.25, phi2_d2=0.0, phi2_d1=0.5))
    assert c.alpha == 0.125 and c.beta == 0.5


@pytest.mark.parametrize("spec", [LossSpec(-1.0, 0.0, 1.0), LossSpec(1.0, 1.0, 0.0)])
def test_invalid_losses(spec):
    with pytest.raises(InvalidLoss):
        coefficients_from_losses(spec)


def test_coefficient_invariants():
    with pytest.raises(InvalidLoss):
        LganCoefficients(-0.1, 1.0)
    with pytest.raises(InvalidLoss):
        LganCoefficients(0.0, 0.0)


def test_lsgan_unit_mode():
    ev = lgan_eigenvalues(LganCoefficients(1, 1, 0), [1.0])
    assert ev.plus[0] == pytest.approx((-1 + 1j * np.sqrt(3)) / 2)
    assert ev.minus[0] == pytest.approx((-1 - 1j * np.sqrt(3)) / 2)
    assert ev.oscillatory[0] and ev.stable[0]


@given(beta_st, pos)
def test_undamped_is_purely_imaginary(beta, xi):
    ev = lgan_eigenvalues(LganCoefficients(0, beta, 0), [xi])
    assert ev.plus[0].real == 0.0
    assert abs(ev.plus[0].imag) == pytest.approx(abs(beta) * np.sqrt(xi))
    assert not ev.stable[0]


def test_optimal_double_root():
    ev = lgan_eigenvalues(LganCoefficients(0, -1, 4), [0.25])
    assert ev.plus[0] == ev.minus[0] == -0.5
    assert ev.discriminant[0] == 0.0 and not ev.oscillatory[0]


@given(nonneg, beta_st, nonneg, st.lists(pos, min_size=1, max_size=20))
@settings(max_examples=200)
def test_root_identities_and_stability(alpha, beta, gamma, xis):
    c = LganCoefficients(alpha, beta, gamma)
    ev = lgan_eigenvalues(c, xis)
    xis = np.asarray(xis)
    s = alpha + gamma * xis
    scale = s + abs(beta) * np.sqrt(xis)
    assert np.allclose(ev.plus + ev.minus, -s, rtol=1e-12, atol=1e-12 * scale.max())
    assert np.allclose(ev.plus * ev.minus, beta ** 2 * xis, rtol=1e-11, atol=1e-12 * scale.max() ** 2)
    assert np.all(ev.plus.real <= 0) and np.all(ev.minus.real <= 0)


@given(nonneg, beta_st, nonneg, pos)
def test_sign_symmetry(alpha, beta, gamma, xi):
    a = lgan_eigenvalues(LganCoefficients(alpha, beta, gamma), [xi])
    b = lgan_eigenvalues(LganCoefficients(alpha, -beta, gamma), [xi])
    assert np.array_equal(a.plus, b.plus) and np.array_equal(a.minus, b.minus)


@given(nonneg, beta_st, nonneg, pos)
@settings(max_examples=200)
def test_against_polynomial_roots(alpha, beta, gamma, xi):
    ev = lgan_eigenvalues(LganCoefficients(alpha, beta, gamma), [xi])
    ref = np.roots([1.0, alpha + gamma * xi, beta ** 2 * xi])
    got = np.sort_complex(np.array([ev.plus[0], ev.minus[0]]))
    ref = np.sort_complex(ref)
    scale = abs(alpha + gamma * xi) + abs(beta) * np.sqrt(xi)
    # np.roots loses accuracy at a double root, so compare with a sqrt(eps) band
    assert np.allclose(got, ref, rtol=1e-6, atol=1e-7 * scale)


def test_optimal_parameters_examples():
    c = optimal_parameters(-1.0, 0.25)
    assert (c.alpha, c.gamma) == (0.0, 4.0)
    c = optimal_parameters(1.0, 1.0, alpha_choice=1.0)
    assert c.gamma == pytest.approx(1.0) and c.alpha == 1.0
    with pytest.raises(InfeasibleAlpha):
        optimal_parameters(-1.0, 0.25, alpha_choice=4.0)
    with pytest.raises(InfeasibleAlpha):
        optimal_parameters(-1.0, 0.25, alpha_choice=-0.1)
    # inside [0, |beta|/sqrt(xi_min)] = [0, 2] but gamma would fall below |beta|/sqrt(xi_min)
    with pytest.raises(InfeasibleAlpha):
        optimal_parameters(-1.0, 0.25, alpha_choice=0.75)
    assert optimal_parameters(-1.0, 0.25, alpha_choice=0.5).gamma == pytest.approx(2.0)


@given(beta_st, st.floats(1e-3, 10.0), st.floats(0.0, 1.0))
@settings(max_examples=150)
def test_optimal_segment(beta, xi_min, frac):
    alpha = frac * abs(beta) * min(np.sqrt(xi_min), 1 / np.sqrt(xi_min))
    c = optimal_parameters(beta, xi_min, alpha_choice=alpha)
    root = np.sqrt(xi_min)
    assert c.alpha + c.gamma * xi_min == pytest.approx(2 * abs(beta) * root, rel=1e-12)
    assert abs(beta) / root * (1 - 1e-12) <= c.gamma <= 2 * abs(beta) / root * (1 + 1e-12)
    s0 = c.alpha + c.gamma * xi_min
    assert abs(s0 ** 2 - 4 * beta ** 2 * xi_min) <= 1e-10 * s0 ** 2
    xis = np.geomspace(xi_min, 1e4 * xi_min, 100)
    disc = (c.alpha + c.gamma * xis) ** 2 - 4 * beta ** 2 * xis
    assert np.all(disc >= -1e-10 * (c.alpha + c.gamma * xis) ** 2)
    assert not np.any(lgan_eigenvalues(c, xis).oscillatory)


def test_max_real_part_examples():
    assert max_real_part(LganCoefficients(1, 1, 0), 1.0) == pytest.approx(-0.5)
    assert max_real_part(optimal_parameters(-1, 0.25), 0.25) == pytest.approx(-0.5)
    assert max_real_part(LganCoefficients(0, 3, 0), 2.0) == 0.0


@given(st.floats(0.01, 5), beta_st, pos)
def test_unpenalized_eta_is_sup_over_spectrum(alpha, beta, xi_min):
    c = LganCoefficients(alpha, beta, 0.0)
    xis = xi_min * np.geomspace(1, 1e4, 200)
    assert spectral_abscissa(c, xis) <= max_real_part(c, xi_min) + 1e-12


def test_penalized_abscissa_tends_to_minus_beta2_over_gamma():
    c = optimal_parameters(-1.0, 0.25)
    # eta at xi_min is -1/2, but high modes decay more slowly
    far = spectral_abscissa(c, [1e8])
    assert far == pytest.approx(-0.25, rel=1e-6)
    assert spectral_abscissa(c, np.geomspace(0.25, 1e6, 50)) > max_real_part(c, 0.25)


def test_xi_must_be_positive():
    with pytest.raises(ValueError):
        lgan_eigenvalues(LganCoefficients(1, 1), [0.0, 1.0])
