"""Strict and mild solutions of the linear equation dX + AX dt = F1 dt + G dW."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ContractError, HypothesisError, ShapeError
from .function_spaces import WeightedHolderPath, graded_grid
from .noise import (INITIAL_STREAM, NoiseOperatorPath, WienerIncrements, ito_integral,
                    refine_increments, replica_rng, stochastic_convolution_paths)
from .quadrature import cumulative_trapezoid_origin, power_cell_integrals, singular_cell_weights
from .spectral import SpectralOperator


@dataclass
class InitialCondition:
    """Gaussian initial value with independent modal coefficients N(mean_k, std_k^2).

    ``regularity`` is "fractional" when the coefficients decay fast enough for
    xi to lie in D(A^beta), "plain" otherwise.
    """

    mean: np.ndarray
    std: np.ndarray | None = None
    regularity: str = "fractional"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.zeros_like(self.mean) if self.std is None else np.asarray(self.std, dtype=float)
        if self.std.shape != self.mean.shape:
            raise ShapeError("mean and std must have the same shape")
        if self.regularity not in ("plain", "fractional"):
            raise HypothesisError(f"unknown regularity tag {self.regularity!r}")

    @classmethod
    def zeros(cls, mode_count):
        return cls(np.zeros(mode_count))

    @property
    def is_random(self):
        return bool(np.any(self.std))

    def sample(self, replica_ids, seed):
        out = np.tile(self.mean, (len(replica_ids), 1))
        if self.is_random:
            for i, rid in enumerate(replica_ids):
                out[i] += self.std * replica_rng(seed, rid, INITIAL_STREAM).standard_normal(self.mean.size)
        return out

    def second_moment(self, op, theta=0.0):
        """E||A^theta xi||^2 in closed form."""
        return float(np.sum(op.eigenvalues ** (2 * theta) * (self.mean ** 2 + self.std ** 2)))

    def shifted(self, delta):
        return InitialCondition(self.mean + np.asarray(delta, dtype=float), self.std.copy(), self.regularity)


@dataclass
class LinearProblem:
    op: SpectralOperator
    beta: float
    sigma: float
    xi: InitialCondition
    f1: WeightedHolderPath | None = None
    noise: NoiseOperatorPath | None = None
    horizon: float = 1.0
    name: str = "linear"
    _norm_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def delta(self):
        return None if self.noise is None else self.noise.delta

    @property
    def has_noise(self):
        return self.noise is not None and not self.noise.is_zero

    def validate(self, strict=False):
        if not 0 < self.sigma < self.beta < 0.5:
            raise HypothesisError(f"need 0 < sigma < beta < 1/2, got sigma={self.sigma}, beta={self.beta}")
        if self.f1 is not None and self.f1.mode_count != self.op.mode_count:
            raise ShapeError("forcing and operator disagree on the mode count")
        if self.noise is not None and self.noise.mode_count != self.op.mode_count:
            raise ShapeError("noise and operator disagree on the mode count")
        if self.xi.mean.size != self.op.mode_count:
            raise ShapeError("initial value and operator disagree on the mode count")
        if strict and self.has_noise:
            self.noise.require_smoothing()

    def forcing_norm_sq(self, n_nodes=800):
        """||F1||^2 in F^{beta,sigma} (deterministic forcing, so no expectation)."""
        from .function_spaces import holder_norm
        if self.f1 is None:
            return 0.0
        key = ("f1", n_nodes)
        if key not in self._norm_cache:
            path = self.f1
            if path.regular_part is not None:
                path = path.resample(graded_grid(self.horizon, n_nodes, 2.0, include_zero=False))
            self._norm_cache[key] = holder_norm(path).total ** 2
        return self._norm_cache[key]

    def noise_norm_sq(self, power=0.0, n_nodes=800):
        """||A^power G||^2 in F^{beta+1/2,sigma} with Hilbert-Schmidt values."""
        from .function_spaces import holder_norm
        if not self.has_noise:
            return 0.0
        key = ("noise", power, n_nodes)
        if key not in self._norm_cache:
            path = self.noise.hs_path(self.op, power, n_nodes)
            self._norm_cache[key] = holder_norm(path).total ** 2
        return self._norm_cache[key]


@dataclass
class SolutionEnsemble:
    """Per-replica solution paths on a common grid with the noise that produced them."""

    op: SpectralOperator
    grid: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    increments: WienerIncrements | None
    problem: LinearProblem | None = None
    ax: np.ndarray | None = None
    noise: NoiseOperatorPath | None = None
    deterministic: np.ndarray | None = None
    stochastic: np.ndarray | None = None
    drift_integral: np.ndarray | None = None
    frac: dict = field(default_factory=dict)

    @property
    def replicas(self):
        return self.x.shape[0]

    def frac_power(self, theta):
        if theta in self.frac:
            return self.frac[theta]
        return self.x * self.op.eigenvalues ** theta

    def second_moment(self, theta=0.0, part="x"):
        """Mean and standard error of ||A^theta Z(t)||^2 over replicas at every node."""
        z = {"x": self.x, "stochastic": self.stochastic}[part]
        if z is None:
            raise ContractError(f"solution has no {part} component")
        sq = np.sum((z * self.op.eigenvalues ** theta) ** 2, axis=-1)
        return sq.mean(axis=0), sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])

    def write_csv(self, filename, replicas=None):
        count = self.replicas if replicas is None else min(replicas, self.replicas)
        ids = self.increments.replica_ids if self.increments is not None else np.arange(self.replicas)
        with open(filename, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replica", "time", "mode", "value"])
            for i in range(count):
                for j, t in enumerate(self.grid):
                    for k, v in enumerate(self.x[i, j]):
                        writer.writerow([int(ids[i]), repr(float(t)), k, repr(float(v))])


def _forcing_regular_part(f1: WeightedHolderPath, times):
    """t^(1-beta) F1(t) at arbitrary times, from the formula or by interpolating samples."""
    if f1.regular_part is not None:
        return np.asarray(f1.regular_part(np.asarray(times, dtype=float)), dtype=float)
    reg = f1.times[:, None] ** (1 - f1.beta) * f1.values
    out = np.empty((np.size(times), f1.mode_count))
    for k in range(f1.mode_count):
        out[:, k] = np.interp(times, f1.times, reg[:, k])
    return out


def _subdivide(grid, refine):
    if refine == 1:
        return grid
    frac = np.arange(refine) / refine
    fine = (grid[:-1, None] + np.diff(grid)[:, None] * frac).ravel()
    return np.append(fine, grid[-1])


def _check_forcing_grid(f1, grid):
    if f1.regular_part is None:
        if f1.times[0] > grid[1] * (1 + 1e-12) or f1.times[-1] < grid[-1] * (1 - 1e-12):
            raise ShapeError("sampled forcing does not cover the solver grid")


def deterministic_convolution(op, f1, grid, refine=1):
    """int_0^t S(t-s) F1(s) ds at every node; shape (N+1, K).

    The smooth factor s^(1-beta) F1(s) is frozen at cell midpoints and the
    kernel exp(-lam(t-s)) s^(beta-1) is integrated exactly over each cell.
    ``refine`` splits every cell into that many sub-cells.
    """
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ShapeError("grid must start at 0 and increase strictly")
    lam = op.eigenvalues
    out = np.zeros((grid.size, op.mode_count))
    if f1 is None:
        return out
    if f1.mode_count != op.mode_count:
        raise ShapeError("forcing and operator disagree on the mode count")
    _check_forcing_grid(f1, grid)
    fine = _subdivide(grid, refine)
    mid = 0.5 * (fine[1:] + fine[:-1])
    g = _forcing_regular_part(f1, mid)
    weights = singular_cell_weights(fine, lam, f1.beta)
    decay = np.exp(-np.outer(np.diff(fine), lam))
    state = np.zeros(op.mode_count)
    for i in range(mid.size):
        state = decay[i] * state + weights[i] * g[i]
        if (i + 1) % refine == 0:
            out[(i + 1) // refine] = state
    return out


def forcing_integral(f1, grid, refine=1):
    """int_0^t F1(s) ds at every node with the same midpoint rule."""
    grid = np.asarray(grid, dtype=float)
    if f1 is None:
        return None
    fine = _subdivide(grid, refine)
    mid = 0.5 * (fine[1:] + fine[:-1])
    cells = power_cell_integrals(fine, f1.beta)[:, None] * _forcing_regular_part(f1, mid)
    total = np.concatenate([np.zeros((1, f1.mode_count)), np.cumsum(cells, axis=0)])
    return total[::refine]


def forcing_at_nodes(f1, grid):
    grid = np.asarray(grid, dtype=float)
    out = np.zeros((grid.size, f1.mode_count))
    out[1:] = grid[1:, None] ** (f1.beta - 1) * _forcing_regular_part(f1, grid[1:])
    return out


def stochastic_convolution(op, noise, increments, workers=1):
    """int_0^t S(t-s) G(s) dW(s) at every node for every replica; shape (R, N+1, K)."""
    if noise is None or noise.is_zero:
        return np.zeros((increments.replicas, increments.grid.size, op.mode_count))
    if not np.allclose(noise.grid, increments.grid):
        raise ShapeError("noise and increments live on different grids")
    if workers <= 1 or increments.replicas < 2 * workers:
        return stochastic_convolution_paths(op.eigenvalues, noise, increments)
    chunks = np.array_split(np.arange(increments.replicas), workers)
    with ThreadPoolExecutor(workers) as pool:
        parts = pool.map(lambda idx: stochastic_convolution_paths(
            op.eigenvalues, noise, increments.select(idx)), chunks)
        return np.concatenate(list(parts), axis=0)


def _split_forcing_generator(op, grid, f1, conv):
    """A I_1 by the regularized split: A S(t) int [F1(s) - F1(t)] ds + [I - S(t)] F1(t).

    The constant F1(t) is integrated exactly by the product weights, so the
    first term equals lam*conv - (1 - exp(-lam t)) F1(t).
    """
    lam = op.eigenvalues
    if f1 is None:
        return np.zeros_like(conv)
    f_now = forcing_at_nodes(f1, grid)
    complement = -np.expm1(-np.outer(grid, lam))
    regularized = lam * conv - complement * f_now
    return regularized + complement * f_now


def solve_linear(problem: LinearProblem, grid, replicas=200, seed=0, theta_list=(), strict=False,
                 increments=None, workers=1, refine=1):
    """Solution X = S(t)xi + I_1 + I_2 for every replica on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    problem.validate(strict=strict)
    op = problem.op
    lam = op.eigenvalues
    noise = None
    if problem.noise is not None:
        noise = problem.noise if np.array_equal(problem.noise.grid, grid) else problem.noise.on_grid(grid)
    h_modes = noise.h_mode_count if noise is not None else op.mode_count
    if increments is None:
        increments = WienerIncrements.sample(grid, h_modes, replicas, seed)
    elif increments.grid.shape != grid.shape or not np.allclose(increments.grid, grid):
        raise ShapeError("increments were drawn on a different grid")
    elif increments.h_mode_count != h_modes:
        raise ShapeError("increments carry the wrong number of H-modes")
    xi = problem.xi.sample(increments.replica_ids, increments.seed)
    conv = deterministic_convolution(op, problem.f1, grid, refine)
    stoch = stochastic_convolution(op, noise, increments, workers)
    homogeneous = np.exp(-np.outer(grid, lam))[None] * xi[:, None, :]
    x = homogeneous + conv[None] + stoch
    sol = SolutionEnsemble(op, grid, x, xi, increments, problem, noise=noise,
                           deterministic=conv, stochastic=stoch)
    if strict:
        gen_xi = lam * homogeneous
        sol.ax = gen_xi + _split_forcing_generator(op, grid, problem.f1, conv)[None] + lam * stoch
    for theta in theta_list:
        sol.frac[theta] = x * lam ** theta
    return sol


def _sup_norm_rms(diff):
    per_replica = np.sqrt(np.sum(diff ** 2, axis=-1)).max(axis=1)
    return float(np.sqrt(np.mean(per_replica ** 2)))


def strict_residual(sol: SolutionEnsemble, refine=1):
    """sup_t ||X(t) + int AX - xi - int F1 - int F2 - int G dW||, root-mean-square over replicas."""
    if sol.ax is None:
        raise ContractError("strict residual needs A X; solve with strict=True")
    if sol.increments is None:
        raise ContractError("strict residual needs the Wiener increments of the solution")
    grid = sol.grid
    res = sol.x - sol.xi[:, None, :] + cumulative_trapezoid_origin(grid, sol.ax)
    f1 = sol.problem.f1 if sol.problem is not None else None
    if f1 is not None:
        res -= forcing_integral(f1, grid, refine)[None]
    if sol.drift_integral is not None:
        res -= sol.drift_integral
    if sol.noise is not None and not sol.noise.is_zero:
        res -= ito_integral(sol.noise, sol.increments)
    return _sup_norm_rms(res)


def mild_residual(sol: SolutionEnsemble, seed=None):
    """Deviation of the solution from the mild formula recomputed on the halved grid.

    The refined noise is an exact Brownian bridge of the coarse increments, so
    only discretization error remains.
    """
    problem = sol.problem
    if problem is None:
        raise ContractError("mild residual needs the originating problem")
    fine = _subdivide(sol.grid, 2)
    seed = sol.increments.seed if seed is None else seed
    noise = sol.noise
    if noise is not None and not noise.is_zero:
        if not noise.diagonal:
            raise ShapeError("bridge refinement is implemented for diagonal noise only")
        inc = refine_increments(sol.increments, sol.op.eigenvalues, seed)
    else:
        inc = WienerIncrements(fine, np.zeros((sol.replicas, fine.size - 1, sol.op.mode_count)),
                               np.zeros((sol.replicas, fine.size - 1, sol.op.mode_count)),
                               sol.increments.seed, sol.increments.replica_ids)
    lam = sol.op.eigenvalues
    conv = deterministic_convolution(sol.op, problem.f1, fine)
    fine_noise = None if noise is None else noise.on_grid(fine)
    stoch = stochastic_convolution(sol.op, fine_noise, inc)
    x_fine = np.exp(-np.outer(fine, lam))[None] * sol.xi[:, None, :] + conv[None] + stoch
    return _sup_norm_rms(sol.x - x_fine[:, ::2])


@dataclass
class UniquenessReport:
    gap: float
    residual_first: float
    residual_second: float

    @property
    def tolerance(self):
        return 2 * (self.residual_first + self.residual_second)

    @property
    def passed(self):
        return self.gap <= self.tolerance


def uniqueness_probe(problem, grid, replicas=50, seed=0, increments=None):
    """Solve twice with different quadrature refinement on one noise replay and compare."""
    first = solve_linear(problem, grid, replicas, seed, strict=True, increments=increments)
    second = solve_linear(problem, grid, replicas, seed, strict=True,
                          increments=first.increments, refine=2)
    gap = _sup_norm_rms(first.x - second.x)
    return UniquenessReport(gap, strict_residual(first), strict_residual(second, refine=2))


class LinearSPDESolver(BaseEstimator):
    """Estimator wrapper: ``fit(problem)`` builds the solution ensemble.

    Parameters mirror the grid and Monte Carlo settings; fitted attributes end
    with an underscore.
    """

    def __init__(self, n_steps=256, grading=2.0, replicas=200, seed=0, strict=True,
                 theta_list=(), workers=1):
        self.n_steps = n_steps
        self.grading = grading
        self.replicas = replicas
        self.seed = seed
        self.strict = strict
        self.theta_list = theta_list
        self.workers = workers

    def fit(self, problem, y=None, increments=None):
        self.grid_ = graded_grid(problem.horizon, self.n_steps, self.grading)
        self.ensemble_ = solve_linear(problem, self.grid_, self.replicas, self.seed,
                                      tuple(self.theta_list), self.strict, increments, self.workers)
        self.strict_residual_ = strict_residual(self.ensemble_) if self.strict else None
        return self

    def transform(self, theta=0.0):
        """Paths of A^theta X, shape (R, N+1, K)."""
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.frac_power(theta)

    def moment(self, theta=0.0):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.second_moment(theta)
