"""Mean-square increment fits, Kolmogorov-type slope checks and moment-bound audits over solution ensembles."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import bounds
from .bounds import BoundData, e100_constant
from .errors import ConfigError, ContractError, DomainError, InsufficientDataError, ShapeError
from .linear import LinearProblem, SolutionEnsemble

MIN_REPLICAS = 500
SLOPE_SLACK = 0.1
SE_SLACK = 3.0


@dataclass
class HolderFit:
    """Mean-square increments E||Z(s+l) - Z(s)||^2 on dyadic lags l.

    ``per_start[i]`` holds the mean square for every start s of lag i, with
    standard errors in ``per_start_se[i]``. The slope regresses the
    start-averaged mean square on the lag in log-log scale.
    """

    lags: np.ndarray
    mean_sq: np.ndarray
    mean_sq_se: np.ndarray
    slope: float
    slope_se: float
    starts: list = field(default_factory=list)
    per_start: list = field(default_factory=list)
    per_start_se: list = field(default_factory=list)

    def ratio_table(self, exponent):
        """(ratio, se) per lag and start for mean_sq / lag^exponent."""
        out = []
        for lag, ms, se in zip(self.lags, self.per_start, self.per_start_se):
            scale = lag ** exponent
            out.append((ms / scale, se / scale))
        return out

    def max_excess(self, exponent, constant):
        """Largest ratio - constant - 3 SE over all (lag, start) pairs; <= 0 means every pair passes."""
        worst = -np.inf
        for ratio, se in self.ratio_table(exponent):
            worst = max(worst, float(np.max(ratio - constant - SE_SLACK * se)))
        return worst


def _fit_slope(lags, ms):
    ok = ms > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(lags[ok]), np.log(ms[ok]), 1)[0])


def increment_moments(paths, grid, lags=None, window=None, min_replicas=MIN_REPLICAS, batches=20):
    """Fit of mean-square increments of ``paths`` (R, N+1, K) on a uniform ``grid``.

    ``lags`` are node offsets (default 1, 2, 4, ... up to a quarter of the window);
    ``window`` = (t_lo, t_hi) restricts both ends of every increment.
    """
    paths = np.asarray(paths, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if paths.ndim == 2:
        paths = paths[..., None]
    if paths.shape[1] != grid.size:
        raise ShapeError("paths and grid disagree on the number of nodes")
    if paths.shape[0] < min_replicas:
        raise InsufficientDataError(f"{paths.shape[0]} replicas given, at least {min_replicas} needed")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9):
        raise ShapeError("increment fits need a uniform grid")
    h = steps[0]
    lo, hi = (grid[0], grid[-1]) if window is None else window
    nodes = np.flatnonzero((grid >= lo - 1e-12 * h) & (grid <= hi + 1e-12 * h))
    first, last = nodes[0], nodes[-1]
    span = last - first
    if lags is None:
        lags = 2 ** np.arange(int(math.log2(max(span // 4, 1))) + 1)
    lags = np.asarray(lags, dtype=int)
    if np.any(lags < 1) or np.any(lags > span):
        raise ShapeError("lags must lie within the window")
    r = paths.shape[0]
    mean_sq, mean_se, starts, per_start, per_se = [], [], [], [], []
    batch_ms = np.zeros((batches, lags.size))
    groups = np.array_split(np.arange(r), batches)
    for i, lag in enumerate(lags):
        idx = np.arange(first, last - lag + 1)
        sq = np.sum((paths[:, idx + lag] - paths[:, idx]) ** 2, axis=-1)
        per_start.append(sq.mean(axis=0))
        per_se.append(sq.std(axis=0, ddof=1) / math.sqrt(r))
        starts.append(grid[idx])
        avg = sq.mean(axis=1)
        mean_sq.append(avg.mean())
        mean_se.append(avg.std(ddof=1) / math.sqrt(r))
        for b, g in enumerate(groups):
            batch_ms[b, i] = avg[g].mean()
    lag_times = lags * h
    mean_sq = np.array(mean_sq)
    slope = _fit_slope(lag_times, mean_sq)
    batch_slopes = np.array([_fit_slope(lag_times, row) for row in batch_ms])
    batch_slopes = batch_slopes[np.isfinite(batch_slopes)]
    slope_se = float(batch_slopes.std(ddof=1) / math.sqrt(batch_slopes.size)) if batch_slopes.size > 1 else float("nan")
    return HolderFit(lag_times, mean_sq, np.array(mean_se), slope, slope_se, starts, per_start, per_se)


class HolderExponentEstimator(BaseEstimator):
    """``fit(paths, grid)`` estimates the mean-square Holder slope; the exponent is slope / 2."""

    def __init__(self, lags=None, window=None, min_replicas=MIN_REPLICAS):
        self.lags = lags
        self.window = window
        self.min_replicas = min_replicas

    def fit(self, paths, grid):
        self.fit_ = increment_moments(paths, grid, self.lags, self.window, self.min_replicas)
        self.slope_ = self.fit_.slope
        self.slope_se_ = self.fit_.slope_se
        self.exponent_ = 0.5 * self.fit_.slope
        return self

    def score(self, paths, grid):
        """Negative absolute slope difference between this fit and a refit on new data."""
        check_is_fitted(self, "fit_")
        other = increment_moments(paths, grid, self.lags, self.window, self.min_replicas)
        return -abs(other.slope - self.slope_)


@dataclass
class RegularityReport:
    label: str
    fit: HolderFit
    target: float
    constant: float | None = None
    excess: float | None = None

    @property
    def slope_ok(self):
        if not np.any(self.fit.mean_sq):
            return True
        return self.fit.slope >= self.target - SLOPE_SLACK

    @property
    def ratio_ok(self):
        return self.excess is None or self.excess <= 0

    @property
    def passed(self):
        return bool(self.slope_ok and self.ratio_ok)


def _require_uniform(sol):
    steps = np.diff(sol.grid)
    if not np.allclose(steps, steps[0], rtol=1e-9):
        raise ShapeError("regularity checks need a solution on a uniform grid")


def verify_e100(sol: SolutionEnsemble, data: BoundData, min_replicas=MIN_REPLICAS):
    """Every dyadic ratio E||A I2(t) - A I2(s)||^2 / (t-s)^(2(beta+delta-1)) against the assembled constant."""
    if sol.stochastic is None:
        raise ContractError("ensemble carries no stochastic convolution")
    if data.delta is None:
        raise DomainError("the increment bound needs a smoothing exponent delta")
    _require_uniform(sol)
    target = 2 * (data.beta + data.delta - 1)
    fit = increment_moments(sol.stochastic * sol.op.eigenvalues, sol.grid, min_replicas=min_replicas)
    constant = e100_constant(data)
    return RegularityReport("e100", fit, target, constant, fit.max_excess(target, constant))


def w_theta_case(theta, beta):
    if 0 <= theta < beta:
        return "i"
    if beta >= 0.25 and 0.25 <= theta <= beta:
        return "ii"
    if beta < 0.25 and 0 <= theta <= beta:
        return "iii"
    raise DomainError(f"theta={theta} with beta={beta} falls outside every regularity case")


def verify_w_theta_regularity(sol: SolutionEnsemble, theta, beta=None, eps=None,
                              min_replicas=MIN_REPLICAS):
    """Slope of E||W_theta(t) - W_theta(s)||^2 against the case target; reports the case used."""
    if sol.stochastic is None:
        raise ContractError("ensemble carries no stochastic convolution")
    _require_uniform(sol)
    beta = sol.problem.beta if beta is None else beta
    case = w_theta_case(theta, beta)
    horizon = sol.grid[-1]
    eps = horizon / 8 if eps is None else eps
    if case == "i":
        window, target = None, 2 * (beta - theta)
    elif case == "ii":
        window, target = (eps, horizon), 2 * (0.5 - theta)
    else:
        window, target = (eps, horizon), 2 * theta
    w = sol.stochastic * sol.op.eigenvalues ** theta
    fit = increment_moments(w, sol.grid, window=window, min_replicas=min_replicas)
    return RegularityReport(f"w_theta[{theta:g}]:{case}", fit, target)


@dataclass
class NormalityReport:
    label: str
    statistic: float
    pvalue: float
    level: float = 0.01

    @property
    def passed(self):
        return bool(self.pvalue > self.level)


def normality_check(sol: SolutionEnsemble, theta=0.0, weights=None, node=-1, level=0.01):
    """Jarque-Bera test on the functional sum_k w_k (A^theta Z)_k of the stochastic convolution.

    Default weights are 1/(k+1), so every mode contributes and theta changes the tested variable.
    """
    if sol.stochastic is None:
        raise ContractError("ensemble carries no stochastic convolution")
    lam = sol.op.eigenvalues
    weights = 1.0 / np.arange(1, lam.size + 1) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != lam.shape:
        raise ShapeError("one weight per mode is needed")
    sample = sol.stochastic[:, node, :] @ (weights * lam ** theta)
    if not np.any(sample):
        return NormalityReport(f"normality[{theta:g}]", 0.0, 1.0, level)
    res = stats.jarque_bera(sample)
    return NormalityReport(f"normality[{theta:g}]", float(res.statistic), float(res.pvalue), level)


def linear_bound_data(problem: LinearProblem, strict_noise=True):
    """Data norms of a linear problem packed for the moment estimates."""
    op = problem.op
    smoothing = strict_noise and problem.has_noise and problem.delta is not None
    return BoundData(
        beta=problem.beta, sigma=problem.sigma, nu=op.decay_rate,
        xi_sq=problem.xi.second_moment(op, 0.0),
        xi_beta_sq=problem.xi.second_moment(op, problem.beta),
        f1_sq=problem.forcing_norm_sq(),
        g_delta_sq=problem.noise_norm_sq(problem.delta) if smoothing else 0.0,
        g_sq=problem.noise_norm_sq(0.0),
        delta=problem.delta if smoothing else None,
    )


def _lhs_samples(name, sol):
    lam = sol.op.eigenvalues
    t = sol.grid[None, :]
    if name == "H12.7":
        if sol.ax is None:
            raise ContractError("H12.7 needs A X; solve in strict mode")
        return np.sum(sol.x ** 2, axis=-1) + t ** 2 * np.sum(sol.ax ** 2, axis=-1)
    if name in ("H10.5", "H17.6", "Ph2", "H18.2"):
        return np.sum((sol.x * lam ** sol.problem.beta) ** 2, axis=-1)
    if name == "H23.4":
        if sol.ax is None:
            raise ContractError("H23.4 needs A X; solve in strict mode")
        return np.sum(sol.ax ** 2, axis=-1)
    raise ConfigError(f"unknown estimate {name!r}")


_RHS = {
    "H12.7": bounds.rhs_h12_7,
    "H10.5": bounds.rhs_h10_5,
    "H17.6": bounds.rhs_h17_6,
    "Ph2": bounds.rhs_ph2,
    "H18.2": bounds.rhs_h18_2,
    "H23.4": bounds.rhs_h23_4,
}
ESTIMATES = tuple(_RHS) + ("Eq22",)


@dataclass
class AuditTable:
    name: str
    times: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray

    @property
    def verdicts(self):
        return self.lhs <= self.rhs + SE_SLACK * self.lhs_se

    @property
    def passed(self):
        return bool(np.all(self.verdicts))

    @property
    def worst_margin(self):
        """Smallest (rhs + 3 SE - lhs) / rhs over the audited times."""
        scale = np.where(self.rhs > 0, self.rhs, 1.0)
        return float(np.min((self.rhs + SE_SLACK * self.lhs_se - self.lhs) / scale))

    def rows(self):
        for t, l, s, r, v in zip(self.times, self.lhs, self.lhs_se, self.rhs, self.verdicts):
            yield {"estimate": self.name, "time": float(t), "lhs": float(l), "lhs_se": float(s),
                   "rhs": float(r), "verdict": "PASS" if v else "FAIL"}


def bound_audit(name, sol=None, data: BoundData | None = None, times=None, dependence=None):
    """MC left side against the assembled right side at every positive grid time.

    ``Eq22`` takes a continuous-dependence report instead of an ensemble; its
    constant is the fitted one.
    """
    if name not in ESTIMATES:
        raise ConfigError(f"unknown estimate {name!r}; choose from {ESTIMATES}")
    if name == "Eq22":
        if dependence is None:
            raise ContractError("Eq22 needs a continuous-dependence report")
        keep = dependence.times > 0
        zeros = np.zeros(int(keep.sum()))
        return AuditTable(name, dependence.times[keep], dependence.left[keep], zeros,
                          dependence.c_fit * dependence.right[keep])
    samples = _lhs_samples(name, sol)
    keep = sol.grid > 0
    if times is not None:
        keep &= np.isin(sol.grid, times)
    samples = samples[:, keep]
    t = sol.grid[keep]
    lhs = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0]) if samples.shape[0] > 1 else np.zeros_like(lhs)
    return AuditTable(name, t, lhs, se, np.broadcast_to(_RHS[name](data, t), t.shape).astype(float))


def write_audits_csv(tables, filename):
    with open(filename, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["estimate", "time", "lhs", "lhs_se", "rhs", "verdict"])
        writer.writeheader()
        for table in tables:
            for row in table.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def audits_json(tables):
    return json.dumps({t.name: {"passed": t.passed, "worst_margin": t.worst_margin} for t in tables},
                      sort_keys=True, indent=2)
