"""Local mild solutions of dX + AX dt = [F1 + F2(X)] dt + G dW by Picard iteration."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bounds import (BoundData, ball_constants, ball_margins, chi, contraction_factor,
                     rhs_h23_4)
from .errors import (ContractError, DegenerateProblemError, DivergenceError, HypothesisError,
                     PremiseError, ShapeError)
from .function_spaces import graded_grid
from .linear import LinearProblem, SolutionEnsemble, solve_linear, strict_residual
from .noise import SHIFT_STREAM, WienerIncrements, coarsen_increments, ou_cell_moments, replica_rng
from .quadrature import hat_weights
from .spectral import SpectralOperator, iota

KAPPA_HEADROOM = 1.05
LIPSCHITZ_SLACK = 1e-9


@dataclass
class Nonlinearity:
    """Drift F2 acting on modal coefficients along the last axis.

    ``c_f2`` is the Lipschitz constant with respect to ||A^eta .||. When the
    range lies in D(A^rho), ``range_bound`` declares sup ||A^rho F2(x)||.
    """

    name: str
    func: Callable
    c_f2: float
    eta: float
    f2_zero_sq: float = 0.0
    rho: float | None = None
    range_bound: float = 0.0

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @property
    def is_zero(self):
        return self.c_f2 == 0 and self.f2_zero_sq == 0

    def lipschitz_audit(self, op: SpectralOperator, pairs=1000, seed=0):
        """Largest observed ||F2(x)-F2(y)|| / ||A^eta(x-y)|| over random pairs; raises above c_f2."""
        rng = np.random.default_rng(seed)
        k = op.mode_count
        damp = op.eigenvalues ** -self.eta
        scale = 10.0 ** rng.uniform(-3, 2, size=(pairs, 1))
        x = scale * damp * rng.standard_normal((pairs, k))
        gap = 10.0 ** rng.uniform(-4, 0, size=(pairs, 1))
        y = x + gap * scale * damp * rng.standard_normal((pairs, k))
        num = np.linalg.norm(self(x) - self(y), axis=-1)
        den = np.linalg.norm(op.eigenvalues ** self.eta * (x - y), axis=-1)
        worst = float(np.max(num / den))
        if worst > self.c_f2 * (1 + LIPSCHITZ_SLACK) + LIPSCHITZ_SLACK:
            raise HypothesisError(f"{self.name}: Lipschitz ratio {worst:.6g} exceeds c_F2={self.c_f2:.6g}")
        return worst


def zero_nonlinearity(eta):
    return Nonlinearity("zero", lambda x: np.zeros_like(x), 0.0, eta, rho=1.0)


def linear_shift_nonlinearity(op, eps, eta):
    """F2(x) = eps A^(-1) x; the fixed point solves the problem with spectrum lam - eps/lam."""
    lam = op.eigenvalues
    return Nonlinearity("linear_shift", lambda x: eps * x / lam, eps * float(lam[0]) ** (-1 - eta), eta)


def _pointwise(op, grid_size, chunk=64):
    """Apply a scalar function to the synthesized field and project back, chunked over leading axes."""
    def apply(x, fn):
        flat = x.reshape(-1, x.shape[-1])
        out = np.empty_like(flat)
        for i in range(0, flat.shape[0], chunk * 256):
            part = flat[i:i + chunk * 256]
            out[i:i + chunk * 256] = op.project(fn(op.synthesize(part, grid_size)), grid_size)
        return out.reshape(x.shape)
    return apply


def saturating_nonlinearity(op, amplitude, eta, grid_size=128):
    """F2(x) = x + a P[tanh(A^eta x)] with the tanh taken pointwise in space.

    The discrete basis is orthonormal on the grid, so the tanh part is
    a-Lipschitz in ||A^eta .|| and x itself contributes lam_1^(-eta).
    """
    if grid_size - 2 < op.mode_count:
        raise ShapeError("spatial grid too coarse for a discrete isometry")
    apply = _pointwise(op, grid_size)
    pw = op.eigenvalues ** eta

    def func(x):
        return x + amplitude * apply(x * pw, np.tanh)

    c = float(op.eigenvalues[0]) ** -eta + amplitude
    return Nonlinearity("saturating", func, c, eta)


def bounded_range_nonlinearity(op, amplitude, eta, low_modes, grid_size=128):
    """F2(x) = a P_low[tanh(x)]: values in the span of the lowest modes, hence in D(A).

    ||A P_low v|| <= lam_low ||v|| and ||tanh||_L2 <= sqrt(L), which gives the declared range bound.
    """
    if grid_size - 2 < op.mode_count:
        raise ShapeError("spatial grid too coarse for a discrete isometry")
    if not 0 < low_modes <= op.mode_count:
        raise ShapeError(f"low_modes must lie in 1..{op.mode_count}")
    apply = _pointwise(op, grid_size)
    mask = np.arange(op.mode_count) < low_modes

    def func(x):
        return amplitude * mask * apply(x, np.tanh)

    bound = amplitude * math.sqrt(op.domain_length) * float(op.eigenvalues[low_modes - 1])
    return Nonlinearity("bounded_range", func, amplitude * float(op.eigenvalues[0]) ** -eta, eta,
                        rho=1.0, range_bound=bound)


@dataclass
class SemilinearProblem:
    linear: LinearProblem
    f2: Nonlinearity
    noise_hypothesis: str = "smoothing"
    name: str = "semilinear"

    @property
    def op(self):
        return self.linear.op

    @property
    def beta(self):
        return self.linear.beta

    @property
    def sigma(self):
        return self.linear.sigma

    @property
    def eta(self):
        return self.f2.eta

    @property
    def delta(self):
        return self.linear.delta

    @property
    def horizon(self):
        return self.linear.horizon

    def validate(self):
        self.linear.validate(strict=False)
        b, eta = self.beta, self.eta
        if self.noise_hypothesis == "smoothing":
            if not max(0.0, 2 * eta - 0.5) < b < eta:
                raise HypothesisError(f"need max(0, 2eta-1/2) < beta < eta, got beta={b}, eta={eta}")
            if self.linear.has_noise:
                self.linear.noise.require_smoothing()
        elif self.noise_hypothesis == "hilbert_schmidt":
            if eta != b:
                raise HypothesisError("the Hilbert-Schmidt noise variant measures F2 in ||A^beta .||: set eta = beta")
        else:
            raise HypothesisError(f"unknown noise hypothesis {self.noise_hypothesis!r}")
        if self.f2.c_f2 < 0 or not np.isfinite(self.f2.c_f2):
            raise HypothesisError("c_F2 must be finite and nonnegative")


def bound_data(problem: SemilinearProblem, kappa_sq=0.0):
    lin = problem.linear
    op = lin.op
    smoothing = problem.noise_hypothesis == "smoothing" and lin.has_noise
    return BoundData(
        beta=problem.beta, sigma=problem.sigma, nu=op.decay_rate,
        xi_sq=lin.xi.second_moment(op, 0.0),
        xi_beta_sq=lin.xi.second_moment(op, problem.beta),
        f1_sq=lin.forcing_norm_sq(),
        g_delta_sq=lin.noise_norm_sq(lin.delta) if smoothing else 0.0,
        g_sq=lin.noise_norm_sq(0.0),
        delta=lin.delta if smoothing else None,
        eta=problem.eta, c_f2=problem.f2.c_f2, f2_zero_sq=problem.f2.f2_zero_sq,
        kappa_sq=kappa_sq, rho=problem.f2.rho, range_bound=problem.f2.range_bound,
    )


def kappa_and_radius(problem: SemilinearProblem):
    """(kappa, C1, C2) with kappa^2/2 = 1.05 max(C1, C2)."""
    d = bound_data(problem)
    values = [d.xi_beta_sq, d.f1_sq, d.g_delta_sq, d.g_sq]
    if not all(np.isfinite(values)):
        raise HypothesisError("data norms entering the ball constants are not finite")
    c1, c2 = ball_constants(d, problem.noise_hypothesis)
    kappa = math.sqrt(2 * KAPPA_HEADROOM * max(c1, c2))
    return kappa, c1, c2


@dataclass
class LocalTimeReport:
    t_loc: float
    binding: str | None
    kappa: float
    contraction: float
    margins: dict


def _largest_admissible(ok, cells):
    """Largest i in 0..cells with ok(i), for ok monotone decreasing in i."""
    if ok(cells):
        return cells
    lo, hi = 0, cells
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def local_time(problem: SemilinearProblem, kappa=None, horizon=None, cells=10_000,
               contraction_target=1.0):
    """Largest S = horizon*i/cells meeting both ball conditions and the contraction condition."""
    if kappa is None:
        kappa = kappa_and_radius(problem)[0]
    d = bound_data(problem, kappa ** 2)
    horizon = problem.horizon if horizon is None else horizon
    half = 0.5 * kappa ** 2
    conditions = {
        "ball_eta": lambda s: ball_margins(d, s)[0] <= half,
        "ball_beta": lambda s: ball_margins(d, s)[1] <= half,
        "contraction": lambda s: contraction_factor(d, s) < contraction_target,
    }
    best = {}
    for name, cond in conditions.items():
        best[name] = _largest_admissible(lambda i, cond=cond: cond(horizon * i / cells), cells)
    index = min(best.values())
    if index == 0:
        s = horizon / cells
        first, second = ball_margins(d, s)
        margins = {"ball_eta": half - first, "ball_beta": half - second,
                   "contraction": contraction_target - contraction_factor(d, s)}
        worst = min(margins, key=margins.get)
        raise DegenerateProblemError(
            f"no admissible local time at resolution {s:.3g}: {worst} margin {margins[worst]:.3g}")
    binding = None if index == cells else min(best, key=best.get)
    t_loc = horizon * index / cells
    first, second = ball_margins(d, t_loc)
    margins = {"ball_eta": half - first, "ball_beta": half - second,
               "contraction": contraction_target - contraction_factor(d, t_loc)}
    return LocalTimeReport(t_loc, binding, kappa, contraction_factor(d, t_loc), margins)


@dataclass
class XiNormState:
    sup_eta: float
    sup_beta: float

    @property
    def xi_norm(self):
        return math.sqrt(self.sup_eta + self.sup_beta)


def _weighted_moments(op, y, grid, beta, eta):
    """Per-node E t^(2(eta-beta))||A^eta Y||^2 and E||A^beta Y||^2 over the leading replica axis."""
    lam = op.eigenvalues
    e_eta = np.mean(np.sum((y * lam ** eta) ** 2, axis=-1), axis=0)
    e_beta = np.mean(np.sum((y * lam ** beta) ** 2, axis=-1), axis=0)
    weight = np.where(grid > 0, grid, 0.0) ** (2 * (eta - beta))
    return weight * e_eta, e_beta


def xi_norm_state(op, y, grid, beta, eta):
    a, b = _weighted_moments(op, y, grid, beta, eta)
    return XiNormState(float(a[1:].max()), float(b.max()))


def nonlinear_convolution(op, grid, values):
    """int_0^t S(t-s) F(s) ds for F linear between nodes; values (R, N+1, K)."""
    lam = op.eigenvalues
    h = np.diff(grid)[:, None]
    w_left, w_right = hat_weights(lam[None, :], h)
    decay = np.exp(-lam * h)
    out = np.zeros_like(values)
    state = np.zeros((values.shape[0], lam.size))
    for j in range(h.shape[0]):
        state = decay[j] * state + w_left[j] * values[:, j] + w_right[j] * values[:, j + 1]
        out[:, j + 1] = state
    return out


def _apply_drift(f2, y, workers=1, chunk=100):
    if workers <= 1 or y.shape[0] <= chunk:
        return np.concatenate([f2(y[i:i + chunk]) for i in range(0, y.shape[0], chunk)], axis=0)
    parts = [y[i:i + chunk] for i in range(0, y.shape[0], chunk)]
    with ThreadPoolExecutor(workers) as pool:
        return np.concatenate(list(pool.map(f2, parts)), axis=0)


@dataclass
class PicardTrace:
    rows: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.rows)

    def ratios(self):
        return np.array([r["ratio"] for r in self.rows[1:]])

    def write_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "xi_distance", "ratio", "bound", "ratio_se", "in_ball"])
            for r in self.rows:
                writer.writerow([r["iter"]] + [repr(float(r[k])) for k in ("xi_distance", "ratio", "bound", "ratio_se")]
                                + [int(r["in_ball"])])


def _batch_ratio_se(op, new_diff, old_diff, grid, beta, eta, batches=20):
    if old_diff is None or new_diff.shape[0] < 2 * batches:
        return float("nan")
    ratios = []
    for idx in np.array_split(np.arange(new_diff.shape[0]), batches):
        num = xi_norm_state(op, new_diff[idx], grid, beta, eta).xi_norm ** 2
        den = xi_norm_state(op, old_diff[idx], grid, beta, eta).xi_norm ** 2
        if den > 0:
            ratios.append(num / den)
    if len(ratios) < 2:
        return float("nan")
    return float(np.std(ratios, ddof=1) / math.sqrt(len(ratios)))


def picard_iterate(problem: SemilinearProblem, grid, replicas=200, seed=0, max_iters=25, tol=1e-6,
                   increments=None, initial="linear", kappa=None, t_loc=None, workers=1):
    """Fixed point of Phi Y = S(t)xi + int S(t-s)[F1 + F2(Y)] ds + int S(t-s) G dW on shared noise.

    Returns the solution ensemble and the iteration trace. Ratios are between
    successive squared Xi-distances, comparable to the contraction factor.
    """
    problem.validate()
    grid = np.asarray(grid, dtype=float)
    if t_loc is not None and grid[-1] > t_loc * (1 + 1e-12):
        raise HypothesisError(f"grid horizon {grid[-1]} exceeds the local time {t_loc}")
    if kappa is None:
        kappa = kappa_and_radius(problem)[0]
    op, b, eta = problem.op, problem.beta, problem.eta
    lam = op.eigenvalues
    strict = problem.noise_hypothesis == "smoothing"
    base = solve_linear(problem.linear, grid, replicas, seed, strict=strict, increments=increments,
                        workers=workers)
    bound = contraction_factor(bound_data(problem, kappa ** 2), grid[-1])
    if initial == "linear":
        y = base.x
    elif initial == "semigroup":
        y = np.exp(-np.outer(grid, lam))[None] * base.xi[:, None, :]
    else:
        raise ContractError(f"unknown initial iterate {initial!r}")
    trace = PicardTrace()
    old_diff, old_dist_sq = None, None
    drift_values = None
    for m in range(1, max_iters + 1):
        drift_values = _apply_drift(problem.f2, y, workers)
        y_new = base.x + nonlinear_convolution(op, grid, drift_values)
        diff = y_new - y
        state = xi_norm_state(op, diff, grid, b, eta)
        dist_sq = state.xi_norm ** 2
        ratio = dist_sq / old_dist_sq if old_dist_sq else float("nan")
        ball = xi_norm_state(op, y_new, grid, b, eta)
        trace.rows.append({
            "iter": m, "xi_distance": state.xi_norm, "ratio": ratio, "bound": bound,
            "ratio_se": _batch_ratio_se(op, diff, old_diff, grid, b, eta),
            "in_ball": max(ball.sup_eta, ball.sup_beta) <= kappa ** 2,
        })
        y, old_diff, old_dist_sq = y_new, diff, dist_sq
        if state.xi_norm < tol:
            trace.converged = True
            break
    if not trace.converged:
        raise DivergenceError(f"Picard iteration did not reach tol={tol} in {max_iters} steps", trace)
    sol = SolutionEnsemble(op, grid, y, base.xi, base.increments, problem.linear, noise=base.noise,
                           deterministic=base.deterministic, stochastic=base.stochastic)
    drift_conv = y - base.x
    if base.ax is not None:
        sol.ax = base.ax + lam * drift_conv
    cells = 0.5 * (drift_values[:, 1:] + drift_values[:, :-1]) * np.diff(grid)[None, :, None]
    sol.drift_integral = np.concatenate([np.zeros_like(drift_values[:, :1]), np.cumsum(cells, axis=1)], axis=1)
    sol.frac["drift_values"] = drift_values
    return sol, trace


class PicardSolver(BaseEstimator):
    """Estimator wrapper: ``fit(problem)`` picks T_loc and runs the Picard iteration on [0, T_loc]."""

    def __init__(self, n_steps=256, grading=2.0, replicas=200, seed=0, max_iters=25, tol=1e-6,
                 contraction_target=0.5, cells=10_000, workers=1):
        self.n_steps = n_steps
        self.grading = grading
        self.replicas = replicas
        self.seed = seed
        self.max_iters = max_iters
        self.tol = tol
        self.contraction_target = contraction_target
        self.cells = cells
        self.workers = workers

    def fit(self, problem, y=None, increments=None):
        self.local_time_ = local_time(problem, cells=self.cells, contraction_target=self.contraction_target)
        self.grid_ = graded_grid(self.local_time_.t_loc, self.n_steps, self.grading)
        self.ensemble_, self.trace_ = picard_iterate(
            problem, self.grid_, self.replicas, self.seed, self.max_iters, self.tol, increments,
            kappa=self.local_time_.kappa, t_loc=self.local_time_.t_loc, workers=self.workers)
        return self

    def transform(self, theta=0.0):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.frac_power(theta)


@dataclass
class StrictUpgradeReport:
    residual: float
    range_max: float
    range_bound: float
    times: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    small_t_weighted: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.lhs <= self.rhs + 3 * self.lhs_se))


def strict_upgrade_check(problem: SemilinearProblem, sol: SolutionEnsemble):
    """Range audit of A^rho F2 along the trajectory, strict residual and the E||AX(t)||^2 bound."""
    f2 = problem.f2
    if f2.rho is None:
        raise HypothesisError(f"{f2.name} declares no range exponent rho")
    if sol.ax is None:
        raise ContractError("strict upgrade needs A X; use smoothing noise")
    lam = problem.op.eigenvalues
    drift = sol.frac.get("drift_values")
    if drift is None:
        drift = _apply_drift(f2, sol.x)
    range_max = float(np.max(np.linalg.norm(drift * lam ** f2.rho, axis=-1)))
    if range_max > f2.range_bound * (1 + LIPSCHITZ_SLACK) + LIPSCHITZ_SLACK:
        raise HypothesisError(f"||A^rho F2(X)|| reached {range_max:.6g} above the declared {f2.range_bound:.6g}")
    residual = strict_residual(sol)
    times = sol.grid[1:]
    sq = np.sum(sol.ax[:, 1:] ** 2, axis=-1)
    lhs = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
    d = bound_data(problem)
    rhs = rhs_h23_4(d, times)
    small = times[:5] ** 2 * lhs[:5]
    return StrictUpgradeReport(residual, range_max, f2.range_bound, times, lhs, se, rhs, small)


def strict_residual_ratios(problem: SemilinearProblem, horizon, steps=(128, 256, 512), grading=3.0,
                           replicas=40, seed=0, tol=1e-10):
    """Strict residuals of the fixed point on nested grids sharing one noise path.

    Returns (residuals, ratios) with ratio = residual(N) / residual(2N).
    """
    steps = sorted(steps)
    finest = graded_grid(horizon, steps[-1], grading)
    noise = problem.linear.noise
    h_modes = noise.h_mode_count if noise is not None else problem.op.mode_count
    inc = WienerIncrements.sample(finest, h_modes, replicas, seed)
    by_n = {steps[-1]: inc}
    n = steps[-1]
    while n > steps[0]:
        inc = coarsen_increments(inc, problem.op.eigenvalues, 2)
        n //= 2
        by_n[n] = inc
    residuals = []
    for n in steps:
        grid = by_n[n].grid
        sol, _ = picard_iterate(problem, grid, replicas, seed, tol=tol, increments=by_n[n])
        residuals.append(strict_residual(sol))
    residuals = np.array(residuals)
    return residuals, residuals[:-1] / residuals[1:]


def shifted_increments(increments: WienerIncrements, lam, lam_shift):
    """Auxiliary normals for the cell integrals at rates ``lam_shift`` given those at ``lam``.

    Sampled from the exact conditional law, so both OU convolutions are driven
    by one Brownian path.
    """
    lam = np.asarray(lam, dtype=float)[None, :]
    lam2 = np.asarray(lam_shift, dtype=float)[None, :]
    h = increments.steps[:, None]
    _, c1, cond1 = ou_cell_moments(lam, h)
    _, c2, cond2 = ou_cell_moments(lam2, h)
    a, b = lam * h, lam2 * h
    cross = -np.expm1(-(lam + lam2) * h) / (lam + lam2) - c1 * c2 / h
    series = h * a * b * (1 / 12 - (a + b) / 24)
    cross = np.where(np.maximum(a, b) < 1e-3, series, cross)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.clip(cross / np.sqrt(cond1 * cond2), -1.0, 1.0)
    rho = np.where(cond1 * cond2 > 0, rho, 1.0)
    r, n, k = increments.dw.shape
    aux = np.empty_like(increments.aux)
    for i, rid in enumerate(increments.replica_ids):
        g = replica_rng(increments.seed, rid, SHIFT_STREAM).standard_normal((n, k))
        aux[i] = rho * increments.aux[i] + np.sqrt(1 - rho ** 2) * g
    return WienerIncrements(increments.grid, increments.dw, aux, increments.seed, increments.replica_ids)


@dataclass
class ShiftOracleReport:
    relative_error: float
    base_gap: float


def linear_shift_oracle(problem: SemilinearProblem, eps, sol: SolutionEnsemble):
    """Compare a Picard fixed point for F2 = eps A^(-1) x with the shifted-spectrum linear solution.

    ``base_gap`` is the relative distance of the F2-free solution, showing the
    comparison is not vacuous.
    """
    op = problem.op
    lam = op.eigenvalues
    shifted_op = SpectralOperator(lam - eps / lam, op.eigenfunction, op.domain_length, op.modes,
                                  f"{op.name}-shift")
    lin = problem.linear
    shifted = LinearProblem(shifted_op, lin.beta, lin.sigma, lin.xi, lin.f1, lin.noise, lin.horizon)
    inc = shifted_increments(sol.increments, lam, shifted_op.eigenvalues)
    exact = solve_linear(shifted, sol.grid, sol.replicas, increments=inc)
    base = solve_linear(lin, sol.grid, sol.replicas, increments=sol.increments)
    norm = np.sqrt(np.sum(exact.x ** 2, axis=(1, 2)))
    err = np.sqrt(np.sum((sol.x - exact.x) ** 2, axis=(1, 2))) / norm
    gap = np.sqrt(np.sum((base.x - exact.x) ** 2, axis=(1, 2))) / norm
    return ShiftOracleReport(float(err.max()), float(gap.min()))


def mittag_leffler(z, nu, terms=2000):
    """E_nu(z) = sum z^k / Gamma(nu k + 1) for z >= 0."""
    if z == 0:
        return 1.0
    k = np.arange(terms)
    logs = k * math.log(z) - gammaln(nu * k + 1)
    top = logs.max()
    return float(math.exp(top) * np.sum(np.exp(logs - top)))


@dataclass
class GronwallReport:
    c_min: float
    c_bound: float
    premise_margin: float

    @property
    def passed(self):
        return self.c_min <= self.c_bound * (1 + 1e-9)


def _kernel_cell_integrals(times, nu):
    """K[i, j] = int over cell j of (t_i - r)^(nu-1) dr for cells left of t_i."""
    t = np.asarray(times, dtype=float)
    left = np.clip(t[:, None] - t[None, :-1], 0, None)
    right = np.clip(t[:, None] - t[None, 1:], 0, None)
    return (left ** nu - right ** nu) / nu


def weighted_gronwall(times, f, phi, a, mu, nu, kernel_scale=None):
    """Check phi <= f + a^(-mu) int_a^t (t-r)^(nu-1) phi dr on the grid and bound phi/f.

    ``c_bound`` is the Mittag-Leffler constant E_nu(k Gamma(nu) (b-a)^nu) with
    k the kernel scale; ``c_min`` is the smallest c with phi <= c f on the grid.
    """
    t = np.asarray(times, dtype=float)
    f = np.asarray(f, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if a <= 0 or nu <= 0:
        raise PremiseError("need a > 0 and nu > 0")
    if t[0] < a * (1 - 1e-12) or np.any(np.diff(t) <= 0):
        raise PremiseError("times must increase strictly from a")
    if np.any(np.diff(f) < -1e-12 * np.abs(f[1:])) or np.any(f < 0):
        raise PremiseError("f must be nonnegative and increasing")
    if np.any(phi < 0) or not np.all(np.isfinite(phi)):
        raise PremiseError("phi must be finite and nonnegative")
    k = a ** -mu if kernel_scale is None else kernel_scale
    cellmax = np.maximum(phi[1:], phi[:-1])
    integral = _kernel_cell_integrals(t, nu) @ cellmax
    slack = f + k * integral - phi
    margin = float(slack.min())
    if margin < -1e-9 * max(1.0, float(np.abs(phi).max())):
        raise PremiseError(f"integral inequality violated by {-margin:.3g}")
    c_bound = mittag_leffler(k * gamma_fn(nu) * (t[-1] - t[0]) ** nu, nu)
    if not np.any(phi):
        c_min = 0.0
    else:
        pos = f > 0
        if np.any(phi[~pos] > 0):
            c_min = float("inf")
        else:
            c_min = float(np.max(phi[pos] / f[pos]))
    return GronwallReport(c_min, c_bound, margin)


@dataclass
class DependenceReport:
    times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    c_fit: float
    gap_norm: float
    premise_holds: bool
    gronwall: GronwallReport | None = None

    @property
    def passed(self):
        return bool(np.all(self.left <= self.c_fit * self.right * (1 + 1e-12) + 1e-300) and self.premise_holds)


def _in_balls(problem, radii):
    if radii is None:
        return
    r1, r2, r3 = radii
    lin = problem.linear
    if lin.forcing_norm_sq() > r1 ** 2:
        raise HypothesisError("forcing lies outside the configured ball")
    if lin.has_noise and lin.noise_norm_sq(lin.delta) > r2 ** 2:
        raise HypothesisError("noise lies outside the configured ball")
    if lin.xi.second_moment(lin.op, lin.beta) > r3 ** 2:
        raise HypothesisError("initial value lies outside the configured ball")


def _difference_norm_sq(problem_a, problem_b):
    """(E||xi - xi'||^2, ||F1 - F1'||^2, ||A^delta (G - G')||^2), shared noise and shared xi randomness."""
    lin_a, lin_b = problem_a.linear, problem_b.linear
    xi_gap = float(np.sum((lin_a.xi.mean - lin_b.xi.mean) ** 2 + (lin_a.xi.std - lin_b.xi.std) ** 2))
    f_gap = 0.0
    if lin_a.f1 is not None or lin_b.f1 is not None:
        from .function_spaces import WeightedHolderPath, holder_norm
        grid = graded_grid(lin_a.horizon, 800, 2.0, include_zero=False)
        fa = lin_a.f1.resample(grid).values if lin_a.f1 is not None else 0.0
        fb = lin_b.f1.resample(grid).values if lin_b.f1 is not None else 0.0
        diff = np.broadcast_to(fa - fb, (grid.size, lin_a.op.mode_count))
        if np.any(diff):
            f_gap = holder_norm(WeightedHolderPath(grid, diff, lin_a.beta, lin_a.sigma, lin_a.horizon)).total ** 2
    g_gap = 0.0
    if lin_a.noise is not None and lin_b.noise is not None and lin_a.delta is not None:
        from .function_spaces import WeightedHolderPath, holder_norm
        pa = lin_a.noise.hs_path(lin_a.op, lin_a.delta)
        pb = lin_b.noise.hs_path(lin_b.op, lin_a.delta)
        diff = pa.values - pb.values
        if np.any(diff):
            g_gap = holder_norm(WeightedHolderPath(pa.times, diff, pa.beta, pa.sigma, pa.horizon)).total ** 2
    return xi_gap, f_gap, g_gap


def continuous_dependence(sol_a, sol_b, problem_a, problem_b, radii=None):
    """Left and right sides of the data-to-solution estimate on the common grid.

    ``c_fit`` is the smallest constant making left <= c_fit * right at every
    node. The premise of the integral inequality for
    q(t) = t^(2eta) E[||A^eta D||^2 + ||A^beta D||^2] is checked with the
    exact constants; when the drift is present its Gronwall constant is reported.
    """
    _in_balls(problem_a, radii)
    _in_balls(problem_b, radii)
    if not np.array_equal(sol_a.grid, sol_b.grid):
        raise ShapeError("solutions live on different grids")
    op = problem_a.op
    lam = op.eigenvalues
    b, eta = problem_a.beta, problem_a.eta
    t = sol_a.grid
    gap = sol_a.x - sol_b.x
    e_eta = np.mean(np.sum((gap * lam ** eta) ** 2, axis=-1), axis=0)
    e_beta = np.mean(np.sum((gap * lam ** b) ** 2, axis=-1), axis=0)
    e_plain = np.mean(np.sum(gap ** 2, axis=-1), axis=0)
    left = t ** (2 * eta) * (e_eta + e_beta) + e_plain
    xi_gap, f_gap, g_gap = _difference_norm_sq(problem_a, problem_b)
    right = xi_gap + t ** (2 * b) * f_gap + g_gap
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(right > 0, left / right, np.where(left > 0, np.inf, 0.0))
    c_fit = float(ratio.max())

    q = t ** (2 * eta) * (e_eta + e_beta)
    ib, ie = iota(b) ** 2, iota(eta) ** 2
    g_const = 4 * op.power_norm(b - problem_a.delta) ** 2 * (ib + ie) * chi(b, b, op.decay_rate) if (
        problem_a.delta is not None and g_gap > 0) else 0.0
    f = (4 * (ib * t ** (2 * (eta - b)) + ie) * xi_gap
         + 4 * (ib * beta_fn(b, 1 - b) ** 2 * t ** (2 * eta) + ie * beta_fn(b, 1 - eta) ** 2 * t ** (2 * b)) * f_gap
         + g_const * t ** (2 * eta) * g_gap)
    c2 = problem_a.f2.c_f2 ** 2
    premise = True
    gron = None
    if c2 > 0:
        # kernel [ib (t-s)^(-2b) + ie (t-s)^(-2eta)] s^(-2eta) q(s), cellwise max of s^(-2eta) q(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            weighted = np.where(t > 0, t ** (-2 * eta) * q, 0.0)
        cellmax = np.maximum(weighted[1:], weighted[:-1])
        kernel = 4 * c2 * t[:, None] ** (2 * eta + 1) * (
            ib * _kernel_cell_integrals(t, 1 - 2 * b) + ie * _kernel_cell_integrals(t, 1 - 2 * eta))
        premise = bool(np.all(q <= (f + kernel @ cellmax) * (1 + 1e-9) + 1e-300))
        # on [a, T] the kernel is dominated by k (t-s)^(-2eta); the part below a joins f
        start = int(np.searchsorted(t, 0.1 * t[-1]))
        a, end = t[start], t[-1]
        k = 4 * c2 * end ** (2 * eta + 1) * a ** (-2 * eta) * (ib * end ** (2 * (eta - b)) + ie)
        f_eff = np.maximum.accumulate((f + kernel[:, :start] @ cellmax[:start])[start:])
        try:
            gron = weighted_gronwall(t[start:], f_eff, q[start:], a, 0.0, 1 - 2 * eta, kernel_scale=k)
        except PremiseError:
            gron = None
    return DependenceReport(t, left, right, c_fit, math.sqrt(float(left.max())), premise, gron)


@dataclass
class SweepReport:
    eps: np.ndarray
    gaps: np.ndarray
    slope: float
    halving_ratio: float
    reports: list = field(default_factory=list)

    @property
    def passed(self):
        return abs(self.slope - 1.0) <= 0.1 and abs(self.halving_ratio - 0.5) <= 0.05


def dependence_sweep(problem: SemilinearProblem, direction, grid, eps_list=(0.04, 0.02, 0.01),
                     replicas=100, seed=0, tol=1e-10, increments=None):
    """Gap norm between solutions from xi and xi + eps*direction on shared noise, for each eps."""
    direction = np.asarray(direction, dtype=float)
    base, _ = picard_iterate(problem, grid, replicas, seed, tol=tol, increments=increments)
    gaps, reports = [], []
    lin = problem.linear
    for eps in eps_list:
        moved_lin = LinearProblem(lin.op, lin.beta, lin.sigma, lin.xi.shifted(eps * direction), lin.f1,
                                  lin.noise, lin.horizon, lin.name)
        moved = SemilinearProblem(moved_lin, problem.f2, problem.noise_hypothesis, problem.name)
        sol, _ = picard_iterate(moved, grid, replicas, seed, tol=tol, increments=base.increments)
        reports.append(continuous_dependence(base, sol, problem, moved))
        gaps.append(reports[-1].gap_norm)
    eps = np.asarray(eps_list, dtype=float)
    gaps = np.asarray(gaps)
    slope = float(np.polyfit(np.log(eps), np.log(gaps), 1)[0])
    order = np.argsort(eps)
    halving = float(gaps[order[0]] / gaps[order[1]]) if eps[order[0]] * 2 == eps[order[1]] else float("nan")
    return SweepReport(eps, gaps, slope, halving, reports)
