"""Linearized GAN coefficients and the map from xi to lGAN eigenvalues.

Each nonzero eigenvalue xi of -Delta_mu yields the pair of roots of

    lambda^2 + (alpha + gamma xi) lambda + beta^2 xi = 0,

where alpha, beta come from the loss curvature and slope at zero and gamma
is the gradient-penalty weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleAlpha, InvalidLoss

DISCRIMINANT_RTOL = 1e-12


@dataclass(frozen=True)
class LossSpec:
    """Loss functions reduced to the derivatives the linearization needs."""

    phi1_d2: float
    phi2_d2: float
    phi2_d1: float


@dataclass(frozen=True)
class LganCoefficients:
    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise InvalidLoss(f"alpha and gamma must be nonnegative (got {self.alpha}, {self.gamma})")
        if self.beta == 0:
            raise InvalidLoss("beta must be nonzero")

    def as_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


def coefficients_from_losses(spec: LossSpec, gamma: float = 0.0) -> LganCoefficients:
    """alpha = (phi1''(0) + phi2''(0)) / 2, beta = phi2'(0)."""
    curvature = spec.phi1_d2 + spec.phi2_d2
    if curvature < 0:
        raise InvalidLoss("phi1''(0) + phi2''(0) must be nonnegative")
    if spec.phi2_d1 == 0:
        raise InvalidLoss("phi2'(0) must be nonzero")
    if gamma < 0:
        raise InvalidLoss("gradient-penalty weight must be nonnegative")
    return LganCoefficients(alpha=0.5 * curvature, beta=float(spec.phi2_d1), gamma=float(gamma))


@dataclass(frozen=True, eq=False)
class LganEigenvalues:
    xis: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    discriminant: np.ndarray
    oscillatory: np.ndarray
    stable: np.ndarray

    def pairs(self):
        return list(zip(self.plus, self.minus))

    def double_root(self):
        return ~self.oscillatory & (np.abs(self.discriminant) <= self._scale() * DISCRIMINANT_RTOL)

    def _scale(self):
        return np.abs(self.plus * self.minus) * 4 + np.abs(self.plus + self.minus) ** 2


def lgan_eigenvalues(coeffs: LganCoefficients, xis) -> LganEigenvalues:
    """Roots lambda_i^{+/-} for every xi_i > 0, computed in complex arithmetic."""
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    if np.any(xis <= 0):
        raise ValueError("lGAN eigenvalues are defined for positive xi only")
    b = coeffs.alpha + coeffs.gamma * xis
    c = coeffs.beta ** 2 * xis
    disc = b * b - 4.0 * c
    scale = b * b + 4.0 * c
    near_zero = np.abs(disc) <= DISCRIMINANT_RTOL * scale
    disc = np.where(near_zero, 0.0, disc)
    root = np.sqrt(disc.astype(complex))
    plus = 0.5 * (-b + root)
    minus = 0.5 * (-b - root)
    # real roots: take the small one from the product, -b + root cancels
    real_dist = ~near_zero & (disc > 0)
    safe = real_dist & (np.abs(minus) > 0)
    plus = np.where(safe, c / np.where(safe, minus, 1.0), plus)
    oscillatory = disc < 0
    stable = np.real(plus) < 0
    return LganEigenvalues(xis=xis, plus=plus, minus=minus, discriminant=disc,
                           oscillatory=oscillatory, stable=stable)


def optimal_parameters(beta: float, xi_min: float, alpha_choice: float | None = None) -> LganCoefficients:
    """(alpha, gamma) on the optimal segment alpha + gamma xi_min = 2|beta| sqrt(xi_min).

    Defaults to the alpha = 0 endpoint, gamma = 2|beta| / sqrt(xi_min).
    Feasible alpha is capped by |beta| / sqrt(xi_min) and also by
    |beta| sqrt(xi_min): beyond the latter gamma drops under |beta| / sqrt(xi_min)
    and the discriminant turns negative just above xi_min.
    """
    if xi_min <= 0:
        raise ValueError("xi_min must be positive")
    if beta == 0:
        raise InvalidLoss("beta must be nonzero")
    root = np.sqrt(xi_min)
    alpha_max = abs(beta) * min(root, 1.0 / root)
    alpha = 0.0 if alpha_choice is None else float(alpha_choice)
    if not 0.0 <= alpha <= alpha_max * (1 + 1e-12):
        raise InfeasibleAlpha(f"alpha must lie in [0, {alpha_max:g}] for beta={beta:g}, "
                              f"xi_min={xi_min:g}; got {alpha:g}")
    alpha = min(alpha, alpha_max)
    gamma = (2 * abs(beta) * root - alpha) / xi_min
    return LganCoefficients(alpha=alpha, beta=float(beta), gamma=float(gamma))


def max_real_part(coeffs: LganCoefficients, xi_min: float) -> float:
    """eta = Re lambda^+ at xi_min, the decay exponent attached to the lowest mode."""
    return float(np.real(lgan_eigenvalues(coeffs, [xi_min]).plus[0]))


def spectral_abscissa(coeffs: LganCoefficients, xis) -> float:
    """max Re lambda over a finite set of xi."""
    ev = lgan_eigenvalues(coeffs, xis)
    return float(np.max(np.real(np.concatenate([ev.plus, ev.minus]))))


def is_oscillatory(coeffs: LganCoefficients, xis) -> bool:
    return bool(np.any(lgan_eigenvalues(coeffs, xis).oscillatory))
