"""Right-hand sides of the moment estimates, assembled from semigroup constants and Beta values.

Every constant is built term by term from iota_theta, Beta functions and the
data norms; nothing is fitted. The Hilbert setting has martingale constant 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import beta as beta_fn
from scipy.special import hyp1f1

from .errors import HypothesisError
from .spectral import iota


def chi(theta, beta, nu):
    """sup_t t^(2(theta-beta)) int_0^t exp(-2 nu (t-s)) s^(2beta-1) ds."""
    if not (0 < beta and beta <= theta < 0.5 and nu > 0):
        raise HypothesisError("chi needs 0 < beta <= theta < 1/2 and nu > 0")

    # int_0^t e^{-2nu(t-s)} s^{2b-1} ds = t^{2b} 1F1(1; 2b+1; -2nu t) / (2b)
    def value(log_t):
        t = math.exp(log_t)
        return t ** (2 * theta) * hyp1f1(1.0, 2 * beta + 1, -2 * nu * t) / (2 * beta)

    scale = -math.log(2 * nu)
    best = minimize_scalar(lambda u: -value(u), bracket=(scale - 3, scale, scale + 3))
    grid = np.linspace(scale - 12, scale + 12, 481)
    coarse = max(value(u) for u in grid)
    return float(max(-best.fun, coarse))


@dataclass(frozen=True)
class BoundData:
    """Exponents and data norms entering the estimates.

    xi_sq, xi_beta_sq: E||xi||^2 and E||A^beta xi||^2.
    f1_sq: ||F1||^2 in F^{beta,sigma}.
    g_delta_sq, g_sq: ||A^delta G||^2 and ||G||^2 in F^{beta+1/2,sigma}.
    """

    beta: float
    sigma: float
    nu: float
    xi_sq: float = 0.0
    xi_beta_sq: float = 0.0
    f1_sq: float = 0.0
    g_delta_sq: float = 0.0
    g_sq: float = 0.0
    delta: float | None = None
    eta: float | None = None
    c_f2: float = 0.0
    f2_zero_sq: float = 0.0
    kappa_sq: float = 0.0
    rho: float | None = None
    range_bound: float = 0.0
    martingale_constant: float = 1.0

    def with_(self, **changes):
        return replace(self, **changes)

    def power_norm(self, theta):
        """||A^theta|| for theta <= 0 on a spectrum bounded below by nu."""
        return self.nu ** theta


def rhs_h13_4(d: BoundData, t):
    """E||A I_2(t)||^2 under the smoothing hypothesis."""
    t = np.asarray(t, dtype=float)
    return (d.martingale_constant * iota(1 - d.delta) ** 2 * d.g_delta_sq
            * beta_fn(2 * d.beta, 2 * d.delta - 1) * t ** (2 * (d.beta + d.delta - 1)))


def e100_constant(d: BoundData):
    """Constant in E||A I_2(t) - A I_2(s)||^2 <= C (t-s)^(2(beta+delta-1))."""
    b, dl = d.beta, d.delta
    first = iota(1 - dl) ** 2 * beta_fn(2 * b, 2 * dl - 1)
    second = iota(2 - dl) ** 2 * beta_fn(2 * b, 1 - 2 * b) / (b + dl - 1) ** 2
    return d.martingale_constant * d.g_delta_sq * (first + second)


def rhs_h13_5(d: BoundData, t):
    """E||I_1(t)||^2 + E||I_2(t)||^2."""
    t = np.asarray(t, dtype=float)
    b = d.beta
    out = 2 * np.exp(-2 * d.nu * t) * d.xi_sq + 2 * d.f1_sq * t ** (2 * b) / b ** 2
    if d.delta is not None:
        out = out + (d.martingale_constant * d.power_norm(-d.delta) ** 2 * d.g_delta_sq
                     * t ** (2 * b) / (2 * b))
    return out


def rhs_h13_6(d: BoundData, t):
    """E||A I_1(t)||^2 + E||A I_2(t)||^2 for t > 0."""
    t = np.asarray(t, dtype=float)
    b, s = d.beta, d.sigma
    bracket = 1 + iota(1) * beta_fn(b - s, s) + np.exp(-d.nu * t)
    out = 2 * iota(1) ** 2 * d.xi_sq / t ** 2 + 2 * bracket ** 2 * d.f1_sq * t ** (2 * (b - 1))
    if d.delta is not None:
        out = out + rhs_h13_4(d, t)
    return out


def rhs_h12_7(d: BoundData, t):
    """E||X(t)||^2 + t^2 E||AX(t)||^2."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        strict = np.where(t > 0, t ** 2 * rhs_h13_6(d, np.where(t > 0, t, 1.0)),
                          2 * iota(1) ** 2 * d.xi_sq)
    return rhs_h13_5(d, t) + strict


def rhs_h10_5(d: BoundData, t):
    """E||A^beta X(t)||^2 for data in D(A^beta) under the smoothing hypothesis."""
    t = np.asarray(t, dtype=float)
    b = d.beta
    out = (3 * np.exp(-2 * d.nu * t) * d.xi_beta_sq
           + 3 * iota(b) ** 2 * beta_fn(b, 1 - b) ** 2 * d.f1_sq + 0 * t)
    if d.delta is not None:
        out = out + (3 * d.martingale_constant * d.power_norm(b - d.delta) ** 2 / (2 * b)
                     * d.g_delta_sq * t ** (2 * b))
    return out


def rhs_h17_6(d: BoundData, t):
    """E||A^beta X(t)||^2 for mild solutions under the weaker noise hypothesis."""
    t = np.asarray(t, dtype=float)
    b = d.beta
    return (6 * np.exp(-2 * d.nu * t) * d.xi_beta_sq
            + 6 * iota(b) ** 2 * beta_fn(b, 1 - b) ** 2 * d.f1_sq
            + 2 * d.martingale_constant * iota(b) ** 2 * beta_fn(2 * b, 1 - 2 * b) * d.g_sq + 0 * t)


def rhs_nonlinear_drift(d: BoundData, t, eta=None):
    """E||A^beta int_0^t S(t-s) F2(X(s)) ds||^2 for X in the kappa-ball."""
    t = np.asarray(t, dtype=float)
    b = d.beta
    eta = d.eta if eta is None else eta
    return (2 * iota(b) ** 2 * d.c_f2 ** 2 * d.kappa_sq * beta_fn(1 + 2 * b - 2 * eta, 1 - 2 * b)
            * t ** (2 * (1 - eta))
            + 2 * iota(b) ** 2 * d.f2_zero_sq * t ** (2 * (1 - b)) / (1 - 2 * b))


def rhs_ph2(d: BoundData, t):
    """E||A^beta X(t)||^2 for the local mild solution, smoothing noise."""
    return 2 * rhs_h10_5(d, t) + 2 * rhs_nonlinear_drift(d, t)


def rhs_h18_2(d: BoundData, t):
    """E||A^beta X(t)||^2 for the local mild solution, weaker noise hypothesis (eta = beta)."""
    return 2 * rhs_h17_6(d, t) + 2 * rhs_nonlinear_drift(d, t, eta=d.beta)


def rhs_h23_4(d: BoundData, t):
    """E||AX(t)||^2 for the strict semilinear solution with F2 ranging in D(A^rho)."""
    t = np.asarray(t, dtype=float)
    rho = d.rho
    drift = (iota(1 - rho) / rho) ** 2 * d.range_bound ** 2 * t ** (2 * rho)
    return 2 * rhs_h13_6(d, t) + 2 * drift


def ball_constants(d: BoundData, noise_hypothesis="smoothing"):
    """(C1, C2) bounding the linear part of the Picard map in the two weighted norms."""
    b, eta = d.beta, d.eta
    if noise_hypothesis == "smoothing":
        c1 = (3 * iota(eta - b) ** 2 * d.xi_beta_sq
              + 6 * iota(eta) ** 2 * beta_fn(b, 1 - eta) ** 2 * d.f1_sq)
        c2 = 3 * iota(0) ** 2 * d.xi_beta_sq + 6 * iota(b) ** 2 * beta_fn(b, 1 - b) ** 2 * d.f1_sq
        if d.delta is not None and d.g_delta_sq > 0:
            c1 += (3 * d.martingale_constant * chi(eta, b, d.nu)
                   * d.power_norm(eta - d.delta) ** 2 * d.g_delta_sq)
            c2 += (3 * d.martingale_constant * chi(b, b, d.nu)
                   * d.power_norm(b - d.delta) ** 2 * d.g_delta_sq)
        return c1, c2
    if noise_hypothesis == "hilbert_schmidt":
        c = (3 * d.xi_beta_sq + 6 * iota(b) ** 2 * beta_fn(b, 1 - b) ** 2 * d.f1_sq
             + 3 * d.martingale_constant * iota(b) ** 2 * beta_fn(2 * b, 1 - 2 * b) * d.g_sq)
        return c, c
    raise HypothesisError(f"unknown noise hypothesis {noise_hypothesis!r}")


def contraction_factor(d: BoundData, horizon):
    """Factor q with ||Phi Y1 - Phi Y2||^2 <= q ||Y1 - Y2||^2 on [0, horizon]."""
    b, eta = d.beta, d.eta
    bracket = (iota(eta) ** 2 * beta_fn(1 + 2 * b - 2 * eta, 1 - 2 * eta)
               + iota(b) ** 2 * beta_fn(1 + 2 * b - 2 * eta, 1 - 2 * b))
    return d.c_f2 ** 2 * bracket * horizon ** (2 * (1 - eta))


def ball_margins(d: BoundData, horizon):
    """Nonlinear contributions to the two ball conditions; each must stay <= kappa^2/2."""
    b, eta, s = d.beta, d.eta, horizon
    expo = 2 * (1 + b - 2 * eta)
    first = (12 * iota(eta) ** 2 * d.c_f2 ** 2 * d.kappa_sq * beta_fn(1 + 2 * b - 2 * eta, 1 - 2 * eta)
             * s ** expo + 12 * iota(eta) ** 2 * d.f2_zero_sq * s ** (2 * (1 - b)) / (1 - 2 * eta))
    second = (12 * iota(b) ** 2 * d.c_f2 ** 2 * d.kappa_sq * beta_fn(1 + 2 * b - 2 * eta, 1 - 2 * b)
              * s ** expo + 12 * iota(b) ** 2 * d.f2_zero_sq * s ** (2 * (1 - b)) / (1 - 2 * b))
    return first, second
