"""Weighted Holder spaces of paths that may blow up like t^(beta-1) at the origin."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InsufficientDataError, ShapeError
from .spectral import HILBERT, ModalVector, NormFlavor


def graded_grid(horizon, n_steps, grading=2.0, include_zero=True):
    """Nodes T*(j/N)**r, clustered near 0 when r > 1."""
    if n_steps < 1 or horizon <= 0 or grading < 1:
        raise DomainError("need n_steps >= 1, horizon > 0, grading >= 1")
    j = np.arange(0 if include_zero else 1, n_steps + 1)
    t = horizon * (j / n_steps) ** grading
    t[-1] = horizon
    return t


@dataclass
class WeightedHolderPath:
    """Samples of an E-valued path on (0, T] with Holder metadata.

    ``values[i]`` holds the modal coefficients at ``times[i]``. When the path
    was built from a formula, ``regular_part(t)`` returns t^(1-beta) F(t) so
    solvers can integrate the singular factor exactly.
    """

    times: np.ndarray
    values: np.ndarray
    beta: float
    sigma: float
    horizon: float | None = None
    flavor: NormFlavor = HILBERT
    regular_part: Callable | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.times.ndim != 1 or self.values.shape[0] != self.times.size:
            raise ShapeError("values must have one row per time node")
        if self.times.size and (self.times[0] <= 0 or np.any(np.diff(self.times) <= 0)):
            raise ShapeError("times must be strictly increasing in (0, T]")
        if not 0 < self.sigma < self.beta < 1:
            raise DomainError(f"need 0 < sigma < beta < 1, got sigma={self.sigma}, beta={self.beta}")
        if self.horizon is None:
            self.horizon = float(self.times[-1]) if self.times.size else 1.0

    @property
    def mode_count(self):
        return self.values.shape[1]

    def evaluate(self, t):
        """Path values at arbitrary times (formula-backed paths only)."""
        if self.regular_part is None:
            raise ShapeError("path has no formula; only its samples are available")
        t = np.asarray(t, dtype=float)
        return t[:, None] ** (self.beta - 1) * self.regular_part(t)

    def resample(self, times):
        times = np.asarray(times, dtype=float)
        return WeightedHolderPath(times, self.evaluate(times), self.beta, self.sigma,
                                  self.horizon, self.flavor, self.regular_part)

    def scaled(self, factor):
        reg = None if self.regular_part is None else (lambda t, f=self.regular_part: factor * f(t))
        return WeightedHolderPath(self.times, factor * self.values, self.beta, self.sigma,
                                  self.horizon, self.flavor, reg)

    def norms(self):
        return self.flavor.norm(self.values)


@dataclass
class HolderNormReport:
    weighted_sup: float
    weighted_seminorm: float
    total: float
    limit_estimate: np.ndarray
    modulus_times: np.ndarray
    modulus_values: np.ndarray
    modulus_vanishing: bool


def _pair_sweep(times, values, flavor, beta, sigma):
    """Running pair supremum w(t_i) = max_{j<i} s^(1-beta+sigma)|F(t)-F(s)|/(t-s)^sigma."""
    w = np.zeros(times.size)
    for i in range(1, times.size):
        s = times[:i]
        diff = flavor.norm(values[i] - values[:i])
        w[i] = np.max(s ** (1 - beta + sigma) * diff / (times[i] - s) ** sigma)
    return w


def _richardson_limit(times, values, beta):
    """Quadratic extrapolation of t^(1-beta) F(t) to t = 0 from the three smallest nodes."""
    t = times[:3]
    y = t[:, None] ** (1 - beta) * values[:3]
    # Lagrange basis evaluated at zero
    l0 = t[1] * t[2] / ((t[0] - t[1]) * (t[0] - t[2]))
    l1 = t[0] * t[2] / ((t[1] - t[0]) * (t[1] - t[2]))
    l2 = t[0] * t[1] / ((t[2] - t[0]) * (t[2] - t[1]))
    return l0 * y[0] + l1 * y[1] + l2 * y[2]


def holder_norm(path: WeightedHolderPath, beta=None):
    """Grid suprema defining the F^{beta,sigma} norm (a lower bound for the continuum norm)."""
    if path.times.size < 3:
        raise InsufficientDataError("holder_norm needs at least 3 nodes")
    beta = path.beta if beta is None else beta
    times, values = path.times, path.values
    weighted_sup = float(np.max(times ** (1 - beta) * path.flavor.norm(values)))
    w = _pair_sweep(times, values, path.flavor, beta, path.sigma)
    seminorm = float(w.max())
    small = slice(1, min(6, times.size))
    mod_t, mod_w = times[small], w[small]
    vanishing = bool(mod_w.size >= 2 and mod_w[0] < mod_w[-1])
    return HolderNormReport(
        weighted_sup=weighted_sup,
        weighted_seminorm=seminorm,
        total=weighted_sup + seminorm,
        limit_estimate=_richardson_limit(times, values, beta),
        modulus_times=mod_t,
        modulus_values=mod_w,
        modulus_vanishing=vanishing,
    )


@dataclass
class EmbeddingReport:
    beta: float
    beta_low: float
    norm_high: HolderNormReport
    norm_low: HolderNormReport
    scale: float

    @property
    def sup_bound_holds(self):
        lhs = self.norm_low.weighted_sup
        return lhs <= self.scale * self.norm_high.weighted_sup * (1 + 1e-12) + 1e-300

    @property
    def finite(self):
        return bool(np.isfinite(self.norm_low.total) and np.isfinite(self.norm_high.total))


def embedding_check(path, beta_low):
    """Norm of the same samples in the larger space F^{beta_low,sigma}."""
    if not path.sigma < beta_low < path.beta:
        raise DomainError(f"beta_low must lie in (sigma, beta) = ({path.sigma}, {path.beta})")
    high = holder_norm(path)
    low = holder_norm(path, beta=beta_low)
    return EmbeddingReport(path.beta, beta_low, high, low, path.horizon ** (path.beta - beta_low))


def make_forcing(kind, grid, direction, beta=None, sigma=None, profile=None, values=None,
                 horizon=None):
    """Construct a forcing path.

    ``kind="power_profile"``: F(t) = t^(beta-1) f(t) * direction with f(0) = 0.
    ``kind="sampled"``: ``values`` given directly on ``grid``.
    """
    grid = np.asarray(grid, dtype=float)
    if isinstance(direction, ModalVector):
        flavor, direction = direction.flavor, direction.coeffs
    else:
        flavor, direction = HILBERT, np.asarray(direction, dtype=float)
    if kind == "power_profile":
        if profile is None or beta is None or sigma is None:
            raise DomainError("power_profile needs beta, sigma and a profile function")
        f0 = float(np.asarray(profile(np.zeros(1)))[0])
        if abs(f0) > 1e-14:
            raise DomainError(f"profile must vanish at t=0, got f(0)={f0}")

        def regular(t, profile=profile, direction=direction):
            return np.asarray(profile(np.asarray(t, dtype=float)))[:, None] * direction

        vals = grid[:, None] ** (beta - 1) * regular(grid)
        return WeightedHolderPath(grid, vals, beta, sigma, horizon, flavor, regular)
    if kind == "sampled":
        if values is None:
            raise DomainError("sampled forcing needs values")
        return WeightedHolderPath(grid, values, beta, sigma, horizon, flavor)
    raise DomainError(f"unknown forcing kind {kind!r}")


def write_path_csv(path, filename):
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"c{k}" for k in range(path.mode_count)])
        for t, row in zip(path.times, path.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(filename, beta, sigma, horizon=None):
    rows = []
    with open(filename, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                rows.append([float(v) for v in row])
    data = np.asarray(rows)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ShapeError(f"{filename} does not hold a time column and modal columns")
    return WeightedHolderPath(data[:, 0], data[:, 1:], beta, sigma, horizon)
