"""Linearized GAN dynamics on a grid measure.

State: a node function ``u`` (discriminator perturbation) and a face field
``v`` (generator velocity). The discrete flow is

    u_t = -alpha u + beta rho^{-1} div(rho v) + gamma Delta_mu u
    v_t = beta grad u

built from the stencils of :mod:`funcgan.laplace`, so the discrete
``grad`` and ``-rho^{-1} div(rho .)`` are exact adjoints. Writing
``v = grad V + v_tilde`` with ``div(rho v_tilde) = 0``, each eigenmode of
-Delta_mu evolves as a 2x2 linear system for ``(<u, w>, <V, w>)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import DegenerateMode, TrivialKernel
from .laplace import LaplaceSpectrum, WeightedLaplacian, assemble
from .lgan import LganCoefficients, lgan_eigenvalues
from .measure import GridDensity

OVERFLOW = 1e150
DEFAULT_MODES = 64
SCHEMES = ("euler", "heun")


def _operator(density_or_op):
    if isinstance(density_or_op, WeightedLaplacian):
        return density_or_op
    return assemble(density_or_op)


def _as_faces(op, v):
    """Flat face vector from either a flat array or per-axis component arrays."""
    if v is None:
        return np.zeros(op.n_faces)
    if isinstance(v, (list, tuple)):
        return op.join_faces(v)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != op.n_faces:
        raise ValueError(f"face field has {v.size} entries, expected {op.n_faces}")
    return v


def _as_nodes(op, u):
    u = np.asarray(u, dtype=float)
    if u.size != op.size:
        raise ValueError(f"grid function has {u.size} entries, expected {op.size}")
    return u.ravel()


@dataclass(frozen=True, eq=False)
class FieldState:
    """Snapshot of ``(u, v)`` at time ``t``; ``v`` holds one face array per axis."""

    u: np.ndarray
    v: tuple
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.u)) or not all(np.all(np.isfinite(c)) for c in self.v):
            raise ValueError("field state has non-finite entries")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "heun"
    tau: float = 1e-3
    steps: int = 1000
    gamma: float | None = None
    record_every: int = 1
    store_every: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.steps < 1 or self.record_every < 1 or self.store_every < 0:
            raise ValueError("steps and record_every must be >= 1")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Norm history of a run.

    ``energy`` is ``sqrt(|u|_mu^2 + |v|_W^2)``, the quantity conserved by the
    undamped flow.
    """

    times: np.ndarray
    u_norms: np.ndarray
    V_norms: np.ndarray
    v_norms: np.ndarray
    mean_u: np.ndarray
    measured_rate: float
    diverged: bool = False
    scheme: str = "analytic"
    states: list = field(default_factory=list)

    @property
    def energy(self):
        return np.sqrt(self.u_norms ** 2 + self.v_norms ** 2)

    def summary(self):
        return {"measured_rate": self.measured_rate, "diverged": self.diverged,
                "scheme": self.scheme, "t_final": float(self.times[-1]),
                "u_norm_final": float(self.u_norms[-1])}


def fit_rate(times, norms) -> float:
    """Least-squares slope of ``log norm`` over the second half of the trace."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    half = times >= times[0] + 0.5 * (times[-1] - times[0])
    ok = half & (norms > 0) & np.isfinite(norms)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(times[ok], np.log(norms[ok]), 1)[0])


# -- Helmholtz splitting ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class HelmholtzSplit:
    """``v = grad(potential) + divfree``; unpacks as ``(potential, divfree)``.

    ``residual`` is ``|G^T W divfree| / |v|_W``, the size of the weak
    divergence left in the divergence-free part.
    """

    potential: np.ndarray
    divfree: np.ndarray
    residual: float

    def __iter__(self):
        return iter((self.potential, self.divfree))


def solve_potential(op: WeightedLaplacian, v) -> np.ndarray:
    """Zero-mean ``V`` with ``K V = G^T W v``, via a bordered sparse solve."""
    v = _as_faces(op, v)
    rhs = op.grad_op.T @ (op.face_weights * v)
    m = op.mass[:, None]
    bordered = sparse.bmat([[op.stiffness, sparse.csr_matrix(m)],
                            [sparse.csr_matrix(m.T), None]], format="csc")
    sol = spsolve(bordered, np.concatenate([rhs, [0.0]]))
    return sol[:-1]


def _weak_divergence(op, v):
    return op.grad_op.T @ (op.face_weights * v)


def helmholtz_decompose(spectrum: LaplaceSpectrum | None, density, v0, *,
                        method: str = "spectral", k: int | None = None) -> HelmholtzSplit:
    """Split a face field into gradient and weighted divergence-free parts.

    ``method="spectral"`` expands the potential on the eigenfunctions,
    ``V0 = sum_k <grad w_k, v0>_W / xi_k  w_k``; ``method="exact"`` solves the
    Neumann problem for ``V0`` directly. The spectral residual shrinks as the
    truncation grows.
    """
    op = _operator(density)
    v0 = _as_faces(op, v0)
    if method == "spectral":
        if spectrum is None:
            raise ValueError("spectral splitting needs a spectrum")
        kk = spectrum.k if k is None else min(k + 1, spectrum.k)
        w = spectrum.eigenfunctions[:, 1:kk]
        proj = (op.face_weights * v0) @ (op.grad_op @ w)
        V0 = w @ (proj / spectrum.xis[1:kk])
    elif method == "exact":
        V0 = solve_potential(op, v0)
    else:
        raise ValueError(f"unknown method {method!r}")
    V0 = V0 - op.mean(V0)
    divfree = v0 - op.gradient(V0)
    scale = max(op.face_norm(v0), 1e-300)
    residual = float(np.linalg.norm(_weak_divergence(op, divfree)) / scale)
    return HelmholtzSplit(V0.reshape(op.shape), divfree, residual)


# -- modal solution ----------------------------------------------------------

def _propagator(mu, delta, t):
    """``exp(mu t) cosh(delta t)`` and ``exp(mu t) sinh(delta t) / delta``.

    Entire in ``delta``; near ``delta = 0`` a series gives the confluent
    limit ``exp(mu t) (1, t)``.
    """
    mu = np.asarray(mu, dtype=complex)[None, :]
    delta = np.asarray(delta, dtype=complex)[None, :]
    t = np.asarray(t, dtype=float)[:, None]
    z = delta * t
    small = np.abs(z) < 1e-3
    z2 = z * z
    base = np.exp(mu * t)
    ch_s = base * (1 + z2 / 2 + z2 * z2 / 24)
    sh_s = base * t * (1 + z2 / 6 + z2 * z2 / 120)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ep = np.exp((mu + delta) * t)
        em = np.exp((mu - delta) * t)
        ch = 0.5 * (ep + em)
        sh = (ep - em) / (2 * np.where(delta == 0, 1.0, delta))
    return np.where(small, ch_s, ch), np.where(small, sh_s, sh)


@dataclass(frozen=True, eq=False)
class ModeExpansion:
    """Initial data expanded on the eigenmodes of -Delta_mu.

    For distinct roots ``coeffs[k] = (c_plus, c_minus)`` with
    ``<u(t), w_k> = c_plus e^{lambda_plus t} + c_minus e^{lambda_minus t}``.
    For a double root the pair holds ``(A, B)`` of the confluent form
    ``(A + B t) e^{lambda t}`` and ``double[k]`` is set.
    """

    c0: float
    coeffs: np.ndarray
    potential: np.ndarray
    divfree: np.ndarray
    xis: np.ndarray
    lambdas: np.ndarray
    double: np.ndarray
    a0: np.ndarray
    b0: np.ndarray
    eigenfunctions: np.ndarray
    lgan: LganCoefficients
    truncation_residual: float
    helmholtz_residual: float
    grid_shape: tuple

    @property
    def k(self):
        return len(self.xis)

    def reconstruct_u0(self):
        """``c0 + sum_k (c_k^+ + c_k^-) w_k``; ``A w_k`` for double modes."""
        amp = np.where(self.double, self.coeffs[:, 0], self.coeffs.sum(axis=1)).real
        return (self.c0 + self.eigenfunctions @ amp).reshape(self.grid_shape)


def project_initial_conditions(spectrum: LaplaceSpectrum, density, u0, v0,
                               k: int = DEFAULT_MODES, coeffs: LganCoefficients | None = None,
                               *, confluent: bool = True) -> ModeExpansion:
    """Expand ``(u0, v0)`` on the first ``k`` nonzero modes.

    Each mode solves ``[[1, 1], [beta/l+, beta/l-]] c = (<u0, w>, <V0, w>)``.
    Double roots switch to the confluent form, or raise
    :class:`DegenerateMode` when ``confluent`` is False.
    """
    if coeffs is None:
        raise ValueError("mode expansion needs the lGAN coefficients")
    op = _operator(density)
    u0 = _as_nodes(op, u0)
    v0 = _as_faces(op, v0)
    kk = min(k, spectrum.k - 1)
    w = spectrum.eigenfunctions[:, 1:kk + 1]
    xis = spectrum.xis[1:kk + 1]
    split = helmholtz_decompose(spectrum, op, v0, k=kk)
    V0 = np.ravel(split.potential)

    c0 = op.mean(u0)
    a0 = (op.mass * u0) @ w
    b0 = (op.mass * V0) @ w
    ev = lgan_eigenvalues(coeffs, xis)
    lp, lm = ev.plus, ev.minus
    double = lp == lm
    beta = coeffs.beta
    pairs = np.zeros((kk, 2), dtype=complex)
    for i in range(kk):
        if double[i]:
            if not confluent:
                raise DegenerateMode(i + 1)
            lam = lp[i]
            pairs[i] = (a0[i], lam * a0[i] - beta * xis[i] * b0[i])
        else:
            mat = np.array([[1.0, 1.0], [beta / lp[i], beta / lm[i]]], dtype=complex)
            pairs[i] = np.linalg.solve(mat, np.array([a0[i], b0[i]], dtype=complex))
    rest = u0 - c0 - w @ a0
    return ModeExpansion(c0=c0, coeffs=pairs, potential=V0.reshape(op.shape),
                         divfree=split.divfree, xis=xis, lambdas=np.stack([lp, lm], axis=1),
                         double=double, a0=a0, b0=b0, eigenfunctions=w, lgan=coeffs,
                         truncation_residual=op.norm(rest),
                         helmholtz_residual=split.residual, grid_shape=op.shape)


def modal_amplitudes(expansion: ModeExpansion, coeffs: LganCoefficients, times):
    """``(a_k(t), b_k(t))`` for every mode, shape ``(len(times), k)`` each."""
    xis = expansion.xis
    s = coeffs.alpha + coeffs.gamma * xis
    mu = -0.5 * s
    delta = np.sqrt((0.25 * s * s - coeffs.beta ** 2 * xis).astype(complex))
    ev = lgan_eigenvalues(coeffs, xis)
    delta = np.where(ev.plus == ev.minus, 0.0, delta)
    ch, sh = _propagator(mu, delta, times)
    a0, b0, beta = expansion.a0, expansion.b0, coeffs.beta
    # exp(M t) = ch I + sh (M - mu I),  M = [[-s, -beta xi], [beta, 0]]
    a = ch * a0 + sh * ((-s - mu) * a0 - beta * xis * b0)
    b = ch * b0 + sh * (beta * a0 - mu * b0)
    return a.real, b.real


def evolve_analytic(expansion: ModeExpansion, coeffs: LganCoefficients, times, *,
                    store_states: bool = False, op: WeightedLaplacian | None = None) -> SimulationTrace:
    """Exact mode-by-mode evolution of a truncated expansion.

    The divergence-free part of ``v`` stays fixed and the mean of ``u`` decays
    as ``c0 exp(-alpha t)``.
    """
    if (coeffs.alpha, coeffs.beta, coeffs.gamma) != (expansion.lgan.alpha, expansion.lgan.beta,
                                                     expansion.lgan.gamma):
        raise ValueError("expansion was projected with different lGAN coefficients")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    a, b = modal_amplitudes(expansion, coeffs, times)
    mean = expansion.c0 * np.exp(-coeffs.alpha * times)
    u_norms = np.sqrt(mean ** 2 + (a ** 2).sum(axis=1))
    V_norms = np.sqrt((b ** 2).sum(axis=1))
    if op is None and store_states:
        raise ValueError("storing states needs the operator")
    df_norm2 = 0.0
    if op is not None:
        df_norm2 = op.face_norm(expansion.divfree) ** 2
    v_norms = np.sqrt((expansion.xis * b ** 2).sum(axis=1) + df_norm2)
    states = []
    if store_states:
        w = expansion.eigenfunctions
        for i, t in enumerate(times):
            u = mean[i] + w @ a[i]
            v = op.gradient(w @ b[i]) + expansion.divfree
            states.append(FieldState(u.reshape(op.shape), tuple(op.split_faces(v)), float(t)))
    return SimulationTrace(times=times, u_norms=u_norms, V_norms=V_norms, v_norms=v_norms,
                           mean_u=mean, measured_rate=fit_rate(times, u_norms),
                           scheme="analytic", states=states)


# -- time stepping -----------------------------------------------------------

def euler_mode_modulus(coeffs: LganCoefficients, xi: float, tau: float) -> float:
    """``|1 + tau lambda|`` for the mode ``xi`` under forward Euler.

    In the oscillatory branch ``|1 + tau lambda|^2 =
    (1 - tau s / 2)^2 + tau^2 (4 beta^2 xi - s^2) / 4`` with
    ``s = alpha + gamma xi``; otherwise the larger of the two real factors.
    """
    s = coeffs.alpha + coeffs.gamma * xi
    disc = 4 * coeffs.beta ** 2 * xi - s * s
    if disc > 0:
        return float(np.sqrt((1 - 0.5 * tau * s) ** 2 + 0.25 * tau * tau * disc))
    ev = lgan_eigenvalues(coeffs, [xi])
    return float(max(abs(1 + tau * ev.plus[0]), abs(1 + tau * ev.minus[0])))


def _max_abs_lambda(op, coeffs, gamma):
    xi_max = op.norm_estimate()
    ev = lgan_eigenvalues(LganCoefficients(coeffs.alpha, coeffs.beta, gamma), [xi_max])
    return float(max(abs(ev.plus[0]), abs(ev.minus[0])))


def evolve_numeric(u0, v0, density, coeffs: LganCoefficients,
                   config: IntegratorConfig) -> SimulationTrace:
    """Integrate the discrete flow with forward Euler or Heun (SSP-RK2).

    The potential ``V`` of ``v`` is advanced alongside, ``V_t = beta (u -
    <u>_mu)``, starting from the exact Neumann solve. A run whose state
    exceeds 1e150 stops and is marked diverged.
    """
    op = _operator(density)
    gamma = coeffs.gamma if config.gamma is None else config.gamma
    alpha, beta, tau = coeffs.alpha, coeffs.beta, config.tau
    u = _as_nodes(op, u0).copy()
    v = _as_faces(op, v0).copy()
    V = solve_potential(op, v)
    V -= op.mean(V)

    stiff = op.stiffness
    gT = op.grad_op.T.tocsr()
    grad = op.grad_op
    wf, mass = op.face_weights, op.mass

    lam = _max_abs_lambda(op, coeffs, gamma)
    if tau * lam > 2:
        warnings.warn(f"tau*max|lambda| = {tau * lam:.3g} > 2; explicit scheme may be unstable",
                      RuntimeWarning, stacklevel=2)

    def rhs(u, v):
        du = -alpha * u - (beta * (gT @ (wf * v)) + gamma * (stiff @ u)) / mass
        dv = beta * (grad @ u)
        dV = beta * (u - mass @ u)
        return du, dv, dV

    rec_t, rec_u, rec_V, rec_v, rec_m, states = [], [], [], [], [], []

    def record(step):
        rec_t.append(step * tau)
        rec_u.append(op.norm(u))
        rec_V.append(op.norm(V))
        rec_v.append(op.face_norm(v))
        rec_m.append(op.mean(u))
        if config.store_every and step % config.store_every == 0:
            states.append(FieldState(u.reshape(op.shape).copy(), tuple(
                c.copy() for c in op.split_faces(v)), step * tau))

    record(0)
    diverged = False
    for step in range(1, config.steps + 1):
        k1 = rhs(u, v)
        if config.scheme == "euler":
            u = u + tau * k1[0]
            v = v + tau * k1[1]
            V = V + tau * k1[2]
        else:
            u1, v1, V1 = u + tau * k1[0], v + tau * k1[1], V + tau * k1[2]
            k2 = rhs(u1, v1)
            u = u + 0.5 * tau * (k1[0] + k2[0])
            v = v + 0.5 * tau * (k1[1] + k2[1])
            V = V + 0.5 * tau * (k1[2] + k2[2])
        big = max(np.abs(u).max(), np.abs(v).max())
        if not np.isfinite(big) or big > OVERFLOW:
            diverged = True
            break
        if step % config.record_every == 0 or step == config.steps:
            record(step)

    times = np.array(rec_t)
    u_norms = np.array(rec_u)
    return SimulationTrace(times=times, u_norms=u_norms, V_norms=np.array(rec_V),
                           v_norms=np.array(rec_v), mean_u=np.array(rec_m),
                           measured_rate=fit_rate(times, u_norms), diverged=diverged,
                           scheme=config.scheme, states=states)


# -- initial data ------------------------------------------------------------

def kernel_field(spectrum, density, seed=0, n_waves: int = 4) -> np.ndarray:
    """Random face field with ``div(rho v) = 0`` in the weak discrete sense.

    Built from a stream function ``S = rho * phi`` on cell centres, with
    ``phi`` a random combination of low sine modes vanishing on the box
    boundary. Axis-0 fluxes are ``h0 dS/dj`` and axis-1 fluxes
    ``-h1 dS/di``, so every node balances exactly. Scaled to unit W-norm.
    """
    op = _operator(density)
    if len(op.shape) != 2:
        raise TrivialKernel("divergence-free fields vanish in one dimension")
    n0, n1 = op.shape
    h0, h1 = op.density.spacing
    rng = np.random.default_rng(seed)
    rho = op.density.rho
    rho_c = 0.25 * (rho[:-1, :-1] + rho[1:, :-1] + rho[:-1, 1:] + rho[1:, 1:])
    x = (np.arange(n0 - 1) + 0.5) / (n0 - 1)
    y = (np.arange(n1 - 1) + 0.5) / (n1 - 1)
    phi = np.zeros((n0 - 1, n1 - 1))
    for p in range(1, n_waves + 1):
        for q in range(1, n_waves + 1):
            phi += rng.standard_normal() / (p * q) * np.outer(np.sin(np.pi * p * x),
                                                             np.sin(np.pi * q * y))
    S = np.zeros((n0 + 1, n1 + 1))
    S[1:-1, 1:-1] = rho_c * phi
    f0 = h0 * (S[1:-1, 1:] - S[1:-1, :-1])
    f1 = -h1 * (S[1:, 1:-1] - S[:-1, 1:-1])
    w0, w1 = op.split_faces(op.face_weights)
    v = op.join_faces([f0 / w0, f1 / w1])
    return v / op.face_norm(v)


def mode_initial_data(spectrum: LaplaceSpectrum, op: WeightedLaplacian, mode: int = 1,
                      v_scale: float = 0.0):
    """``u0 = w_mode`` and ``v0 = v_scale * grad w_mode``."""
    w = spectrum.eigenfunctions[:, mode]
    return w.copy(), v_scale * op.gradient(w)


def random_initial_data(spectrum: LaplaceSpectrum, op: WeightedLaplacian, seed=0,
                        n_modes: int = 6, decay: float = 1.0, mean: float = 0.0):
    """Generic smooth data on the first ``n_modes`` nonzero modes.

    Mode amplitudes are standard normal scaled by ``k^-decay``; the same for
    the potential of ``v0``.
    """
    n_modes = min(n_modes, spectrum.k - 1)
    rng = np.random.default_rng(seed)
    scale = np.arange(1, n_modes + 1, dtype=float) ** -decay
    w = spectrum.eigenfunctions[:, 1:n_modes + 1]
    u0 = mean + w @ (rng.standard_normal(n_modes) * scale)
    V0 = w @ (rng.standard_normal(n_modes) * scale)
    return u0, op.gradient(V0)
