import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funcgan.dynamics import (FieldState, IntegratorConfig, euler_mode_modulus, evolve_analytic,
                              evolve_numeric, fit_rate, helmholtz_decompose, kernel_field,
                              modal_amplitudes, mode_initial_data, project_initial_conditions,
                              random_initial_data, solve_potential)
from funcgan.errors import DegenerateMode, TrivialKernel
from funcgan.lgan import LganCoefficients, lgan_eigenvalues, max_real_part, optimal_parameters

LSGAN = LganCoefficients(1.0, 1.0, 0.0)


def _complex_mode_data(sp, op, coeffs, mode=1):
    """Real and imaginary parts of the eigenvector (lambda w, beta w) of one mode."""
    w = sp.eigenfunctions[:, mode]
    lam = lgan_eigenvalues(coeffs, [sp.xis[mode]]).plus[0]
    gw = op.gradient(w)
    return (lam.real * w, coeffs.beta * gw), (lam.imag * w, 0 * gw), lam


# -- Helmholtz -----------------------------------------------------------------

@pytest.mark.parametrize("method", ["spectral", "exact"])
def test_gradient_field_round_trip(coarse_gauss, method):
    op, sp = coarse_gauss
    w1 = sp.eigenfunctions[:, 1]
    V0, vt = helmholtz_decompose(sp, op, op.gradient(w1), method=method)
    assert np.allclose(V0, w1, atol=1e-9)
    assert op.face_norm(vt) < 1e-9


def test_1d_divergence_free_part_vanishes(hermite, rng):
    op, sp = hermite
    v0 = rng.standard_normal(op.n_faces)
    split = helmholtz_decompose(sp, op, v0, method="exact")
    assert op.face_norm(split.divfree) <= 1e-8 * op.face_norm(v0)
    assert abs(op.mean(split.potential)) < 1e-12


def test_2d_rotational_field_has_no_potential(gauss2d):
    op, sp = gauss2d
    vt = kernel_field(sp, op, seed=3)
    split = helmholtz_decompose(sp, op, vt, method="exact")
    assert op.norm(split.potential) < 1e-6
    assert split.residual < 1e-8


def test_2d_decomposition_is_exact(gauss2d, rng):
    op, sp = gauss2d
    V = rng.standard_normal(op.size)
    vt = kernel_field(sp, op, seed=1)
    v0 = op.gradient(V) + vt
    split = helmholtz_decompose(None, op, v0, method="exact")
    assert np.allclose(op.gradient(np.ravel(split.potential)) + split.divfree, v0, atol=1e-12)
    assert op.face_norm(split.divfree - vt) < 1e-8
    assert split.residual < 1e-8


def test_spectral_residual_shrinks_with_k(gauss2d, rng):
    op, sp = gauss2d
    v0 = op.gradient(rng.standard_normal(op.size))
    res = [helmholtz_decompose(sp, op, v0, k=k).residual for k in (5, 15, 39)]
    assert res[0] > res[1] > res[2]


def test_solve_potential_matches_weak_equation(coarse_gauss, rng):
    op, _ = coarse_gauss
    v = rng.standard_normal(op.n_faces)
    V = solve_potential(op, v)
    lhs = op.stiffness @ V
    rhs = op.grad_op.T @ (op.face_weights * v)
    assert np.allclose(lhs, rhs, atol=1e-10 * np.abs(rhs).max())


# -- projection ------------------------------------------------------------------

def test_projection_of_exact_eigenmode(hermite):
    op, sp = hermite
    w1 = sp.eigenfunctions[:, 1]
    lp = lgan_eigenvalues(LSGAN, [sp.xis[1]]).plus[0]
    v0 = (LSGAN.beta / lp).real * op.gradient(w1)
    # (beta/lambda) is complex; use the complex-linear projection through both parts
    ex_re = project_initial_conditions(sp, op, w1, v0, k=10, coeffs=LSGAN)
    ex_im = project_initial_conditions(sp, op, 0 * w1, (LSGAN.beta / lp).imag * op.gradient(w1),
                                       k=10, coeffs=LSGAN)
    c = ex_re.coeffs + 1j * ex_im.coeffs
    assert c[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert abs(c[0, 1]) < 1e-9
    assert np.abs(c[1:]).max() < 1e-9


def test_projection_with_zero_velocity(hermite):
    op, sp = hermite
    w1 = sp.eigenfunctions[:, 1]
    ex = project_initial_conditions(sp, op, w1, None, k=10, coeffs=LSGAN)
    cp, cm = ex.coeffs[0]
    lp, lm = ex.lambdas[0]
    assert cp + cm == pytest.approx(1.0, abs=1e-10)
    assert abs(cp / lp + cm / lm) < 1e-10
    assert np.abs(ex.coeffs[1:]).max() < 1e-10


def test_constant_initial_data(hermite):
    op, sp = hermite
    ex = project_initial_conditions(sp, op, np.ones(op.size), None, k=20, coeffs=LSGAN)
    assert ex.c0 == pytest.approx(1.0, abs=1e-12)
    assert np.abs(ex.coeffs).max() < 1e-10
    assert ex.truncation_residual < 1e-10


def test_reconstruction_and_truncation_residual(hermite):
    op, sp = hermite
    u0, v0 = random_initial_data(sp, op, seed=2, n_modes=8, mean=0.3)
    ex = project_initial_conditions(sp, op, u0, v0, k=20, coeffs=LSGAN)
    assert np.allclose(ex.reconstruct_u0().ravel(), u0, atol=1e-10)
    assert ex.truncation_residual < 1e-10
    short = project_initial_conditions(sp, op, u0, v0, k=4, coeffs=LSGAN)
    assert short.truncation_residual > 0.1


def test_projection_needs_coefficients(hermite):
    op, sp = hermite
    with pytest.raises(ValueError):
        project_initial_conditions(sp, op, np.ones(op.size), None)


# -- analytic evolution ----------------------------------------------------------

def test_undamped_mode_energy_is_conserved(hermite):
    op, sp = hermite
    c = LganCoefficients(0.0, 1.0, 0.0)
    u0, v0 = random_initial_data(sp, op, seed=1, n_modes=6)
    ex = project_initial_conditions(sp, op, u0, v0, k=20, coeffs=c)
    t = np.linspace(0, 10, 201)
    a, b = modal_amplitudes(ex, c, t)
    energy = a ** 2 + ex.xis * b ** 2
    assert np.abs(energy - energy[0]).max() / max(energy[0].max(), 1e-300) <= 1e-8 * 10


def test_undamped_single_mode_is_periodic(hermite):
    op, sp = hermite
    c = LganCoefficients(0.0, 2.0, 0.0)
    u0, v0 = mode_initial_data(sp, op, mode=2, v_scale=0.7)
    ex = project_initial_conditions(sp, op, u0, v0, k=10, coeffs=c)
    period = 2 * np.pi / abs(ex.lambdas[1, 0])
    tr = evolve_analytic(ex, c, [0.0, 0.3 * period, period, 5 * period])
    assert tr.u_norms[2] == pytest.approx(tr.u_norms[0], rel=1e-10)
    assert tr.u_norms[3] == pytest.approx(tr.u_norms[0], rel=1e-9)
    assert tr.u_norms[1] != pytest.approx(tr.u_norms[0], rel=1e-3)


def test_mean_decays_exponentially(hermite):
    op, sp = hermite
    c = LganCoefficients(2.0, 1.0, 0.0)
    ex = project_initial_conditions(sp, op, np.ones(op.size), None, k=10, coeffs=c)
    t = np.linspace(0, 3, 31)
    tr = evolve_analytic(ex, c, t)
    assert np.allclose(tr.mean_u, np.exp(-2 * t), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_lsgan_rate(hermite, seed):
    op, sp = hermite
    u0, v0 = random_initial_data(sp, op, seed=seed)
    ex = project_initial_conditions(sp, op, u0, v0, k=64, coeffs=LSGAN)
    tr = evolve_analytic(ex, LSGAN, np.linspace(0, 20, 401))
    assert tr.measured_rate == pytest.approx(-0.5, rel=0.05)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 3.0])
def test_norm_bound(hermite, alpha):
    op, sp = hermite
    c = LganCoefficients(alpha, 1.0, 0.0)
    eta = max_real_part(c, sp.xi_min)
    t = np.linspace(0, 20, 801)
    for seed in range(4):
        u0, _ = random_initial_data(sp, op, seed=seed, n_modes=10)
        ex = project_initial_conditions(sp, op, u0, None, k=64, coeffs=c)
        tr = evolve_analytic(ex, c, t)
        assert np.all(tr.u_norms <= 2 * tr.u_norms[0] * np.exp(eta * t) * (1 + 1e-6))


def test_analytic_states_match_norms(coarse_gauss):
    op, sp = coarse_gauss
    u0, v0 = random_initial_data(sp, op, seed=4)
    ex = project_initial_conditions(sp, op, u0, v0, k=60, coeffs=LSGAN)
    tr = evolve_analytic(ex, LSGAN, [0.0, 1.0], store_states=True, op=op)
    assert np.allclose(tr.states[0].u.ravel(), u0, atol=1e-10)
    assert np.allclose(op.join_faces(list(tr.states[0].v)), v0, atol=1e-10)
    assert op.norm(tr.states[1].u) == pytest.approx(tr.u_norms[1], rel=1e-10)


def test_analytic_rejects_mismatched_coefficients(hermite):
    op, sp = hermite
    ex = project_initial_conditions(sp, op, np.ones(op.size), None, k=4, coeffs=LSGAN)
    with pytest.raises(ValueError):
        evolve_analytic(ex, LganCoefficients(0.5, 1.0), [0.0, 1.0])
    with pytest.raises(ValueError):
        evolve_analytic(ex, LSGAN, [1.0, 0.5])


# -- double root ----------------------------------------------------------------

def test_confluent_mode_matches_numeric(wide_gauss):
    op, sp = wide_gauss
    c = optimal_parameters(-1.0, sp.xi_min)
    ex = project_initial_conditions(sp, op, sp.eigenfunctions[:, 1], None, k=60, coeffs=c)
    assert ex.double[0] and not ex.double[1:].any()
    t_end, tau = 4.0, 1e-3
    tr_a = evolve_analytic(ex, c, np.linspace(0, t_end, 41))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tr_n = evolve_numeric(sp.eigenfunctions[:, 1], None, op, c,
                              IntegratorConfig("heun", tau, int(t_end / tau), record_every=100))
    # the mode amplitude passes through zero at t = -1/lambda, so mix in an absolute floor
    assert np.allclose(tr_n.u_norms, tr_a.u_norms, rtol=1e-4, atol=1e-6)
    # confluent form (1 + lambda t) e^{lambda t} for a0 = 1, b0 = 0
    lam = ex.lambdas[0, 0].real
    expect = np.abs(1 + lam * tr_a.times) * np.exp(lam * tr_a.times)
    assert np.allclose(tr_a.u_norms, expect, rtol=1e-10, atol=1e-14)


def test_double_root_without_confluent_path(wide_gauss):
    op, sp = wide_gauss
    c = optimal_parameters(-1.0, sp.xi_min)
    with pytest.raises(DegenerateMode):
        project_initial_conditions(sp, op, sp.eigenfunctions[:, 1], None, k=5, coeffs=c,
                                   confluent=False)


# -- numeric integrators -----------------------------------------------------------

def test_heun_matches_analytic(hermite):
    op, sp = hermite
    u0, v0 = random_initial_data(sp, op, seed=0)
    ex = project_initial_conditions(sp, op, u0, v0, k=20, coeffs=LSGAN)
    tr_n = evolve_numeric(u0, v0, op, LSGAN, IntegratorConfig("heun", 1e-3, 5000, record_every=50))
    tr_a = evolve_analytic(ex, LSGAN, tr_n.times)
    rel = np.abs(tr_n.u_norms - tr_a.u_norms) / tr_a.u_norms
    assert rel.max() <= 1e-4
    assert np.allclose(tr_n.V_norms, tr_a.V_norms, rtol=1e-4)


def _terminal_error(op, sp, scheme, tau, t_end=1.0):
    u0, v0 = random_initial_data(sp, op, seed=5)
    ex = project_initial_conditions(sp, op, u0, v0, k=60, coeffs=LSGAN)
    ref = evolve_analytic(ex, LSGAN, [0.0, t_end], store_states=True, op=op).states[-1]
    n = int(round(t_end / tau))
    tr = evolve_numeric(u0, v0, op, LSGAN, IntegratorConfig(scheme, tau, n, store_every=n))
    return op.norm(tr.states[-1].u - ref.u)


@pytest.mark.parametrize("scheme,ratio", [("heun", 4.0), ("euler", 2.0)])
def test_convergence_order(coarse_gauss, scheme, ratio):
    op, sp = coarse_gauss
    e1 = _terminal_error(op, sp, scheme, 0.01)
    e2 = _terminal_error(op, sp, scheme, 0.005)
    assert e1 / e2 == pytest.approx(ratio, rel=0.2)


def test_numeric_mean_decay(coarse_gauss):
    op, sp = coarse_gauss
    u0, v0 = random_initial_data(sp, op, seed=1, mean=0.7)
    tr = evolve_numeric(u0, v0, op, LSGAN, IntegratorConfig("heun", 0.01, 200))
    # the mean obeys m' = -alpha m, which Heun advances by 1 - tau + tau^2 / 2 per step
    steps = np.arange(len(tr.times))
    assert np.allclose(tr.mean_u, 0.7 * (1 - 0.01 + 0.5e-4) ** steps, rtol=0, atol=1e-14)
    assert np.abs(tr.mean_u - 0.7 * np.exp(-tr.times)).max() <= 0.1 * 0.01 ** 2


def test_penalty_override_in_config(coarse_gauss):
    op, sp = coarse_gauss
    u0, v0 = random_initial_data(sp, op, seed=1)
    c = LganCoefficients(1.0, 1.0, 0.5)
    a = evolve_numeric(u0, v0, op, c, IntegratorConfig("heun", 0.005, 100))
    b = evolve_numeric(u0, v0, op, LganCoefficients(1.0, 1.0, 0.0),
                       IntegratorConfig("heun", 0.005, 100, gamma=0.5))
    assert np.array_equal(a.u_norms, b.u_norms)


# -- Euler instability ---------------------------------------------------------------

@pytest.mark.parametrize("example", [((0, 1, 0), 1.0, 0.1, np.sqrt(1.01)),
                                     ((0, 1, 0), 1.0, 0.0, 1.0),
                                     ((1, 1, 0), 1.0, 0.1, np.sqrt(0.91))])
def test_euler_mode_modulus_examples(example):
    (a, b, g), xi, tau, expect = example
    assert euler_mode_modulus(LganCoefficients(a, b, g), xi, tau) == pytest.approx(expect, rel=1e-12)


def test_euler_modulus_cross_check():
    # the alpha = 1 case against |1 + tau lambda| with lambda = (-1 + i sqrt 3) / 2
    lam = (-1 + 1j * np.sqrt(3)) / 2
    assert euler_mode_modulus(LSGAN, 1.0, 0.1) == pytest.approx(abs(1 + 0.1 * lam), rel=1e-14)


@given(st.floats(0, 5), st.floats(0.1, 5), st.floats(0, 5), st.floats(1e-3, 50), st.floats(1e-4, 0.5))
@settings(max_examples=200)
def test_euler_modulus_matches_matrix_eigenvalues(alpha, beta, gamma, xi, tau):
    c = LganCoefficients(alpha, beta, gamma)
    s = alpha + gamma * xi
    step = np.eye(2) + tau * np.array([[-s, -beta * xi], [beta, 0.0]])
    ref = np.abs(np.linalg.eigvals(step)).max()
    assert euler_mode_modulus(c, xi, tau) == pytest.approx(ref, rel=1e-6)


def test_euler_growth_law(coarse_gauss):
    op, sp = coarse_gauss
    c = LganCoefficients(0.0, 1.0, 0.0)
    tau, steps = 0.05, 40
    re, im, _ = _complex_mode_data(sp, op, c)
    cfg = IntegratorConfig("euler", tau, steps, store_every=1)
    tr_re = evolve_numeric(*re, op, c, cfg)
    tr_im = evolve_numeric(*im, op, c, cfg)
    # |u_re + i u_im| grows by exactly |1 + tau lambda| per step
    amp = np.array([np.sqrt(op.norm(a.u) ** 2 + op.norm(b.u) ** 2)
                    for a, b in zip(tr_re.states, tr_im.states)])
    growth = amp[1:] / amp[:-1]
    expect = np.sqrt(1 + tau ** 2 * sp.xis[1])
    assert np.abs(growth - expect).max() <= 1e-8
    assert euler_mode_modulus(c, sp.xis[1], tau) == pytest.approx(expect, rel=1e-14)


def test_overflow_marks_divergence(hermite):
    op, sp = hermite
    u0, v0 = mode_initial_data(sp, op, mode=1)
    c = LganCoefficients(0.0, 1.0, 0.0)
    with pytest.warns(RuntimeWarning, match="tau"):
        tr = evolve_numeric(u0 + 1e-3 * sp.eigenfunctions[:, 60], v0, op, c,
                            IntegratorConfig("euler", 0.05, 100000, record_every=10))
    assert tr.diverged
    assert tr.times[-1] < 0.05 * 100000
    assert np.all(np.isfinite(tr.u_norms))


def test_no_warning_for_stable_step(coarse_gauss):
    op, sp = coarse_gauss
    u0, v0 = mode_initial_data(sp, op)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evolve_numeric(u0, v0, op, LSGAN, IntegratorConfig("heun", 0.01, 10))


# -- kernel ---------------------------------------------------------------------

def test_kernel_field_is_trivial_in_1d(hermite):
    op, sp = hermite
    with pytest.raises(TrivialKernel):
        kernel_field(sp, op)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_kernel_field_weak_pairing(gauss2d, rng, seed):
    op, sp = gauss2d
    v = kernel_field(sp, op, seed=seed)
    assert op.face_norm(v) == pytest.approx(1.0)
    for _ in range(5):
        uh = rng.standard_normal(op.size)
        assert abs(op.face_inner(op.gradient(uh), v)) <= 1e-8 * op.norm(uh)
    assert np.abs(op.grad_op.T @ (op.face_weights * v)).max() <= 1e-12


def test_kernel_field_is_held_by_dynamics(gauss2d):
    op, sp = gauss2d
    v0 = kernel_field(sp, op, seed=2)
    tr = evolve_numeric(np.zeros(op.size), v0, op, LSGAN,
                        IntegratorConfig("heun", 0.01, 1000, store_every=1000))
    vt = op.join_faces(list(tr.states[-1].v))
    assert op.face_norm(vt - v0) <= 1e-6
    assert tr.u_norms.max() <= 1e-6


# -- small pieces ----------------------------------------------------------------

def test_fit_rate_on_pure_exponential():
    t = np.linspace(0, 10, 101)
    assert fit_rate(t, 3 * np.exp(-0.7 * t)) == pytest.approx(-0.7, rel=1e-12)
    assert np.isnan(fit_rate([0.0, 1.0], [0.0, 0.0]))


def test_config_and_state_validation():
    with pytest.raises(ValueError):
        IntegratorConfig("rk4")
    with pytest.raises(ValueError):
        IntegratorConfig("heun", tau=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig("heun", steps=0)
    with pytest.raises(ValueError):
        FieldState(np.array([np.nan]), (np.zeros(1),))
