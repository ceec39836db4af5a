"""Product-integration weights for exponential kernels against singular or linear factors."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammainc, roots_jacobi

_DEGREE = 8
_NODES = 0.5 * (1 - np.cos((2 * np.arange(_DEGREE + 1) + 1) * np.pi / (2 * _DEGREE + 2)))
_INV_VANDERMONDE = np.linalg.inv(np.vander(_NODES, _DEGREE + 1, increasing=True))
_FACTORIALS = np.array([math.factorial(p) for p in range(_DEGREE + 1)], dtype=float)
_SERIES_TERMS = 24
# cells wider than this end-point ratio are split geometrically before interpolation
_MAX_CELL_RATIO = 1.25


def exp_moments(mu, degree=_DEGREE):
    """m_p(mu) = int_0^1 exp(-mu x) x^p dx for p = 0..degree, stacked on a new last axis."""
    mu = np.asarray(mu, dtype=float)[..., None]
    p = np.arange(degree + 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        m = _FACTORIALS[: degree + 1] * gammainc(p + 1, mu) / mu ** (p + 1)
    # sum_n (-mu)^n / (n! (p+n+1)) avoids 0/0 for small mu
    n = np.arange(_SERIES_TERMS)
    coeff = (-1.0) ** n / np.array([math.factorial(i) for i in n], dtype=float)
    small = mu[..., None] ** n * coeff / (p[:, None] + n + 1)
    return np.where(mu > 0.5, m, small.sum(axis=-1))


def _regular_cell_weights(a, b, lam, beta):
    """int_a^b exp(-lam(b-s)) s^(beta-1) ds for cells away from the origin.

    The smooth factor s^(beta-1) is interpolated by a degree-8 polynomial in
    x = (b-s)/h and integrated exactly against the exponential.
    """
    h = b - a
    x = _NODES[None, :]
    phi = (b[:, None] - h[:, None] * x) ** (beta - 1)
    coeffs = phi @ _INV_VANDERMONDE.T
    m = exp_moments(np.outer(h, lam))
    return h[:, None] * np.einsum("jp,jkp->jk", coeffs, m)


def _split_cell_weights(a, b, lam, beta):
    """Regular-cell weights with wide cells cut into geometric pieces and recombined by decay."""
    out = _regular_cell_weights(a, b, lam, beta)
    for j in np.flatnonzero(b / a > _MAX_CELL_RATIO):
        pieces = math.ceil(math.log(b[j] / a[j]) / math.log(_MAX_CELL_RATIO))
        pts = a[j] * (b[j] / a[j]) ** (np.arange(pieces + 1) / pieces)
        pts[-1] = b[j]
        sub = _regular_cell_weights(pts[:-1], pts[1:], lam, beta)
        out[j] = np.sum(np.exp(-np.outer(b[j] - pts[1:], lam)) * sub, axis=0)
    return out


def _origin_cell_weights(b, lam, beta, nodes=24):
    """int_0^b exp(-lam(b-s)) s^(beta-1) ds by Gauss-Jacobi for small lam*b."""
    x, w = roots_jacobi(nodes, 0.0, beta - 1)
    s = 0.5 * b * (1 + x)
    return (0.5 * b) ** beta * np.exp(-np.outer(lam, b - s)) @ w


def singular_cell_weights(edges, lam, beta):
    """V[j, k] = int over cell j of exp(-lam_k (t_{j+1}-s)) s^(beta-1) ds.

    ``edges`` are the cell boundaries starting at 0. With beta = 1 this is the
    plain exponential integral (1-exp(-lam h))/lam.
    """
    edges = np.asarray(edges, dtype=float)
    lam = np.asarray(lam, dtype=float)
    a, b = edges[:-1], edges[1:]
    if beta == 1:
        h = (b - a)[:, None]
        return -np.expm1(-lam * h) / lam
    out = np.empty((a.size, lam.size))
    if a[0] != 0:
        out[:] = _split_cell_weights(a, b, lam, beta)
        return out
    out[1:] = _split_cell_weights(a[1:], b[1:], lam, beta)
    b0 = b[0]
    small = lam * b0 <= 30
    out[0, small] = _origin_cell_weights(b0, lam[small], beta)
    if not small.all():
        big = lam[~small]
        half = np.array([0.5 * b0])
        near = _split_cell_weights(half, np.array([b0]), big, beta)[0]
        far = np.exp(-big * 0.5 * b0) * _origin_cell_weights(0.5 * b0, big, beta)
        out[0, ~small] = near + far
    return out


def power_cell_integrals(edges, beta):
    """int over each cell of s^(beta-1) ds."""
    edges = np.asarray(edges, dtype=float)
    return (edges[1:] ** beta - edges[:-1] ** beta) / beta


def hat_weights(lam, h):
    """Weights (w_left, w_right) with int_0^h exp(-lam u) [left*(u/h) + right*(1-u/h)] du.

    u runs backward from the right end of the cell, so w_right multiplies the
    value at the right node.
    """
    x = np.asarray(lam, dtype=float) * np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi1 = -np.expm1(-x) / x
        psi2 = (1 - np.exp(-x) * (1 + x)) / x ** 2
    small = x < 1e-3
    psi1 = np.where(small, 1 - x / 2 + x ** 2 / 6 - x ** 3 / 24, psi1)
    psi2 = np.where(small, 0.5 - x / 3 + x ** 2 / 8 - x ** 3 / 30, psi2)
    return h * psi2, h * (psi1 - psi2)


def cumulative_trapezoid_origin(times, values):
    """Running integral from 0 with a power-law fit on the first cell.

    ``values`` has time on axis 1: shape (R, N+1, K). On [t_0, t_1] each
    component is modelled as y1*(s/t1)^p with p fitted from the nodes t1, t2
    when both share a sign; otherwise the cell falls back to the trapezoid rule.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    out = np.zeros_like(y)
    h = np.diff(t)
    cells = 0.5 * (y[:, 1:] + y[:, :-1]) * h[None, :, None]
    trap0 = cells[:, 0]
    y1, y2 = y[:, 1], y[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(y2 / y1) / math.log(t[2] / t[1])
    fit_ok = (y1 * y2 > 0) & np.isfinite(p) & (p > -0.95)
    p = np.where(fit_ok, np.minimum(p, 4.0), 0.0)
    first = np.where(fit_ok, y1 * t[1] / (1 + p), trap0)
    cells[:, 0] = first
    np.cumsum(cells, axis=1, out=out[:, 1:])
    return out
