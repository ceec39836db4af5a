"""Cylindrical Wiener increments, gamma-radonifying norms and exact OU convolutions.

Randomness is keyed by (master seed, stream, replica): every replica owns a
Philox stream, and inside it the normals are laid out step-major, mode-minor.
Replica r therefore receives the same numbers whatever the batch or worker
layout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.special import roots_jacobi

from .errors import DomainError, HypothesisError, ShapeError
from .function_spaces import WeightedHolderPath, graded_grid
from .spectral import HILBERT, LpNorm

WIENER_STREAM = 0
INITIAL_STREAM = 1
BRIDGE_STREAM = 2
SHIFT_STREAM = 3
AUX_STREAM = 4


def replica_rng(seed, replica, stream=WIENER_STREAM):
    """Generator for one replica of one stream, independent of execution order."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(replica)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class WienerIncrements:
    """Brownian increments dW[r, j, n] ~ N(0, t_{j+1}-t_j) for R replicas.

    ``aux`` holds independent standard normals paired with each increment; the
    exact OU convolution uses them for the part of the cell integral that is
    not determined by the increment itself.
    """

    grid: np.ndarray
    dw: np.ndarray
    aux: np.ndarray
    seed: int | None = None
    replica_ids: np.ndarray | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.dw.ndim != 3 or self.dw.shape != self.aux.shape:
            raise ShapeError("dw and aux must both have shape (replicas, steps, modes)")
        if self.dw.shape[1] != self.grid.size - 1:
            raise ShapeError("increments do not match the grid")
        if self.replica_ids is None:
            self.replica_ids = np.arange(self.dw.shape[0])

    @property
    def replicas(self):
        return self.dw.shape[0]

    @property
    def h_mode_count(self):
        return self.dw.shape[2]

    @property
    def steps(self):
        return np.diff(self.grid)

    @classmethod
    def sample(cls, grid, h_mode_count, replicas, seed, first_replica=0):
        grid = np.asarray(grid, dtype=float)
        n = grid.size - 1
        sq = np.sqrt(np.diff(grid))[:, None]
        ids = np.arange(first_replica, first_replica + replicas)
        dw = np.empty((replicas, n, h_mode_count))
        aux = np.empty_like(dw)
        for i, r in enumerate(ids):
            z = replica_rng(seed, r).standard_normal((n, h_mode_count, 2))
            dw[i] = z[..., 0] * sq
            aux[i] = z[..., 1]
        return cls(grid, dw, aux, seed, ids)

    def select(self, index):
        index = np.atleast_1d(index)
        return WienerIncrements(self.grid, self.dw[index], self.aux[index], self.seed,
                                self.replica_ids[index])

    def write_csv(self, filename):
        """One row per (replica, step, mode): increment value and its auxiliary normal."""
        with open(filename, "w", newline="") as fh:
            fh.write("replica,step,mode,value,aux\n")
            for i, r in enumerate(self.replica_ids):
                for j in range(self.dw.shape[1]):
                    for n in range(self.dw.shape[2]):
                        fh.write(f"{r},{j},{n},{float(self.dw[i, j, n])!r},{float(self.aux[i, j, n])!r}\n")

    @classmethod
    def read_csv(cls, filename, grid, h_mode_count, replicas, seed=0):
        """Load increments; a missing aux column is regenerated from ``seed``."""
        grid = np.asarray(grid, dtype=float)
        n = grid.size - 1
        dw = np.full((replicas, n, h_mode_count), np.nan)
        aux = np.full_like(dw, np.nan)
        with open(filename, newline="") as fh:
            reader = csv.reader(fh)
            first = next(reader, None)
            if first is None:
                raise ShapeError(f"{filename} is empty")
            header = [h.strip() for h in first]
            has_aux = "aux" in header
            for row in reader:
                if not row:
                    continue
                try:
                    r, j, m = int(row[0]), int(row[1]), int(row[2])
                    value = float(row[3])
                    extra = float(row[4]) if has_aux else None
                except (ValueError, IndexError):
                    raise ShapeError(f"{filename}: malformed row {row!r}") from None
                if not (0 <= r < replicas and 0 <= j < n and 0 <= m < h_mode_count):
                    raise ShapeError(f"increment index ({r},{j},{m}) outside the configured shape")
                dw[r, j, m] = value
                if has_aux:
                    aux[r, j, m] = extra
        if np.isnan(dw).any():
            raise ShapeError(f"{filename} does not cover every (replica, step, mode)")
        if not has_aux:
            for r in range(replicas):
                aux[r] = replica_rng(seed, r, AUX_STREAM).standard_normal((n, h_mode_count))
        elif np.isnan(aux).any():
            raise ShapeError(f"{filename} has incomplete aux column")
        return cls(grid, dw, aux, seed)


def _first_cell_rms(func, h, beta, nodes=12):
    """Root-mean-square of G over (0, h] for G(t) = t^(beta-1/2) * smooth(t)."""
    x, w = roots_jacobi(nodes, 0.0, 2 * beta - 1)
    s = 0.5 * h * (1 + x)
    smooth = func(s) * s.reshape((-1,) + (1,) * (func(s).ndim - 1)) ** (0.5 - beta)
    # int_0^h s^(2beta-1) smooth^2 ds, Jacobi weight (1+x)^(2beta-1)
    integral = (0.5 * h) ** (2 * beta) * np.tensordot(w, smooth ** 2, axes=1)
    return np.sqrt(integral / h)


@dataclass
class NoiseOperatorPath:
    """Time-dependent map G(t): H -> E held as piecewise-constant cell levels.

    ``levels[j]`` is used on [t_j, t_{j+1}): G(t_j) for j >= 1 and the
    root-mean-square of G over the first cell, where G may blow up like
    t^(beta-1/2). ``delta`` is the smoothing exponent (None when no smoothing
    is assumed).
    """

    grid: np.ndarray
    levels: np.ndarray
    beta: float
    sigma: float
    delta: float | None = None
    func: Callable | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.levels.shape[0] != self.grid.size - 1:
            raise ShapeError("one level per grid cell is required")
        if self.levels.ndim not in (2, 3):
            raise ShapeError("levels must be (cells, K) or (cells, K, N_H)")

    @property
    def diagonal(self):
        return self.levels.ndim == 2

    @property
    def mode_count(self):
        return self.levels.shape[1]

    @property
    def h_mode_count(self):
        return self.levels.shape[1] if self.diagonal else self.levels.shape[2]

    @property
    def is_zero(self):
        return not np.any(self.levels)

    def on_grid(self, grid):
        if self.func is None:
            raise ShapeError("noise path has no formula and cannot be resampled")
        return make_noise_from_function(self.func, grid, self.beta, self.sigma, self.delta)

    def maps_at(self, times):
        if self.func is None:
            raise ShapeError("noise path has no formula")
        return self.func(np.asarray(times, dtype=float))

    def hs_path(self, op, power=0.0, n_nodes=800, grading=2.0):
        """The map t -> A^power G(t) sampled on a fine graded grid, flattened for HS norms."""
        t = graded_grid(self.grid[-1], n_nodes, grading, include_zero=False)
        maps = self.maps_at(t)
        if self.diagonal:
            vals = maps * op.eigenvalues ** power
        else:
            vals = (maps * (op.eigenvalues ** power)[:, None]).reshape(t.size, -1)
        return WeightedHolderPath(t, vals, self.beta + 0.5, self.sigma, self.grid[-1])

    def require_smoothing(self):
        if self.delta is None:
            raise HypothesisError("this operation needs a smoothing exponent delta")
        if not 1 - self.beta < self.delta <= 1:
            raise HypothesisError(f"delta={self.delta} outside (1-beta, 1] with beta={self.beta}")


def make_noise_from_function(func, grid, beta, sigma, delta=None):
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0:
        raise ShapeError("noise grid must start at 0")
    first = _first_cell_rms(func, grid[1], beta)
    rest = func(grid[1:-1])
    levels = np.concatenate([first[None], rest], axis=0)
    return NoiseOperatorPath(grid, levels, beta, sigma, delta, func)


def make_noise(grid, scales, beta, sigma, delta=None, profile=None):
    """Diagonal noise G(t) = t^(beta-1/2) p(t) diag(scales); p defaults to 1."""
    scales = np.asarray(scales, dtype=float)

    def func(t, scales=scales, profile=profile, beta=beta):
        t = np.asarray(t, dtype=float)
        amp = t ** (beta - 0.5)
        if profile is not None:
            amp = amp * profile(t)
        return amp[:, None] * scales

    return make_noise_from_function(func, grid, beta, sigma, delta)


def zero_noise(grid, mode_count, beta, sigma, delta=None):
    grid = np.asarray(grid, dtype=float)
    levels = np.zeros((grid.size - 1, mode_count))
    return NoiseOperatorPath(grid, levels, beta, sigma, delta,
                             lambda t, k=mode_count: np.zeros((np.size(t), k)))


def gamma_norm(phi, flavor=HILBERT, mc_samples=0, rng=None):
    """Gamma-radonifying norm of a K x N_H map; returns (value, standard error)."""
    phi = np.asarray(phi, dtype=float)
    if phi.size == 0:
        raise ShapeError("empty map")
    if phi.ndim == 1:
        phi = np.diag(phi)
    if flavor.kind == "hilbert":
        return float(np.linalg.norm(phi)), 0.0
    if mc_samples < 100:
        raise DomainError("the L^p flavor needs at least 100 Monte Carlo samples")
    rng = np.random.default_rng(rng)
    g = rng.standard_normal((mc_samples, phi.shape[1]))
    sq = flavor.norm(g @ phi.T) ** 2
    mean = sq.mean()
    if mean == 0:
        return 0.0, 0.0
    se = sq.std(ddof=1) / math.sqrt(mc_samples)
    value = math.sqrt(mean)
    return value, se / (2 * value)


def operator_norm(phi, flavor=HILBERT, tol=1e-10, max_iter=10_000, rng=0):
    """Norm of a K x K map on E.

    Hilbert flavor: power iteration on phi^T phi. L^p flavor: Riesz-Thorin
    upper bound from the 1- and sup-norms of the map acting on grid values.
    """
    phi = np.asarray(phi, dtype=float)
    if flavor.kind == "hilbert":
        v = np.random.default_rng(rng).standard_normal(phi.shape[1])
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(max_iter):
            w = phi.T @ (phi @ v)
            size = np.linalg.norm(w)
            if size == 0:
                return 0.0
            v = w / size
            new = math.sqrt(size)
            if abs(new - est) <= tol * new:
                return new
            est = new
        return est
    _, w, basis = flavor.op.spatial_grid(flavor.grid_size)
    grid_map = basis.T @ phi @ (basis * w)
    p = flavor.p
    one = np.max((w @ np.abs(grid_map)) / w)
    sup = np.max(np.abs(grid_map).sum(axis=1))
    return float(one ** (1 / p) * sup ** (1 - 1 / p))


@dataclass
class SubmultiplicativityReport:
    lhs: float
    lhs_se: float
    op_norm: float
    rhs_gamma: float
    rhs_se: float

    @property
    def rhs(self):
        return self.op_norm * self.rhs_gamma

    @property
    def passed(self):
        slack = 3 * math.hypot(self.lhs_se, self.op_norm * self.rhs_se)
        return self.lhs <= self.rhs * (1 + 1e-9) + slack


def gamma_submultiplicativity_check(phi1, phi2, flavor=HILBERT, mc_samples=4000, rng=None):
    """Compare ||phi1 phi2||_gamma with ||phi1|| ||phi2||_gamma for one instance."""
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    seed = np.random.default_rng(rng).integers(2**63)
    lhs, lhs_se = gamma_norm(phi1 @ phi2, flavor, mc_samples, seed)
    g, g_se = gamma_norm(phi2, flavor, mc_samples, seed)
    return SubmultiplicativityReport(lhs, lhs_se, operator_norm(phi1, flavor), g, g_se)


@dataclass
class EmbeddingDemo:
    eigenvalues: np.ndarray
    off_diagonal_max: float
    partial_trace: float


def hs_embedding_demo(n_modes):
    """Embedding J of H into the weighted space with weights 1/n; J J* e_m = e_m / m^2."""
    if n_modes < 1:
        raise DomainError("need at least one mode")
    m = np.arange(1, n_modes + 1, dtype=float)
    # J e_m = e_m = f_m / m in the orthonormal basis f_m = m e_m of the larger space
    j = sparse.diags(1.0 / m)
    jj = (j @ j.T).tocoo()
    off = jj.data[jj.row != jj.col]
    # eigenvector e_m of JJ* in H coordinates maps to e_m / m^2
    eig = jj.diagonal()
    return EmbeddingDemo(eig, float(np.abs(off).max(initial=0.0)), math.fsum(eig[::-1]))


def ito_integral(noise: NoiseOperatorPath, increments: WienerIncrements):
    """Left-point sums of G dW at every node; shape (R, N+1, K)."""
    if noise.grid.shape != increments.grid.shape or not np.allclose(noise.grid, increments.grid):
        raise ShapeError("noise and increments live on different grids")
    if noise.diagonal:
        steps = increments.dw * noise.levels
    else:
        steps = np.einsum("jkn,rjn->rjk", noise.levels, increments.dw)
    out = np.zeros((increments.replicas, noise.grid.size, noise.mode_count))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


def ou_cell_moments(lam, h):
    """Variance v of int_0^h e^{-lam(h-s)}dw, its covariance c with w(h), and v - c^2/h."""
    lam = np.asarray(lam, dtype=float)
    h = np.asarray(h, dtype=float)
    x = lam * h
    var = -np.expm1(-2 * x) / (2 * lam)
    cov = -np.expm1(-x) / lam
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = var - cov ** 2 / h
    series = h * x ** 2 * (1 / 12 - x / 12 + 17 * x ** 2 / 360)
    cond = np.where(x < 1e-3, series, np.maximum(cond, 0.0))
    return var, cov, cond


def ou_convolution_step(lam, g, dt, state, rng):
    """Exact update of int e^{-lam(t-s)} g dw over one step plus the coupled increment."""
    if np.any(np.asarray(lam) <= 0):
        raise DomainError("rate must be positive")
    if dt <= 0:
        raise DomainError("step must be positive")
    rng = np.random.default_rng(rng)
    shape = np.broadcast(np.asarray(lam), np.asarray(state), np.asarray(g)).shape
    z = rng.standard_normal((2,) + shape)
    _, cov, cond = ou_cell_moments(lam, dt)
    dw = math.sqrt(dt) * z[0]
    xi = cov / dt * dw + np.sqrt(cond) * z[1]
    return np.exp(-np.asarray(lam) * dt) * state + g * xi, dw


def ou_cell_integrals(lam, increments: WienerIncrements):
    """Per-cell integrals Z[r, j, k] = int_cell e^{-lam_k (t_{j+1}-s)} dW_k(s) (diagonal case)."""
    h = increments.steps[:, None]
    _, cov, cond = ou_cell_moments(lam[None, :], h)
    return cov / h * increments.dw + np.sqrt(cond) * increments.aux


def stochastic_convolution_paths(lam, noise: NoiseOperatorPath, increments: WienerIncrements):
    """Exact-in-law OU convolution with piecewise-constant G; shape (R, N+1, K)."""
    h = increments.steps[:, None]
    decay = np.exp(-lam * h)
    _, cov, cond = ou_cell_moments(lam[None, :], h)
    if noise.diagonal:
        if noise.mode_count != increments.h_mode_count:
            raise ShapeError("diagonal noise needs as many H-modes as E-modes")
        kicks = noise.levels * (cov / h * increments.dw + np.sqrt(cond) * increments.aux)
    else:
        # each H-mode shares its increment across E-modes; the per-pair law is exact
        gdw = np.einsum("jkn,rjn->rjk", noise.levels, increments.dw)
        gaux = np.einsum("jkn,rjn->rjk", noise.levels, increments.aux)
        kicks = cov / h * gdw + np.sqrt(cond) * gaux
    out = np.zeros((increments.replicas, increments.grid.size, lam.size))
    state = np.zeros((increments.replicas, lam.size))
    for j in range(h.shape[0]):
        state = decay[j] * state + kicks[:, j]
        out[:, j + 1] = state
    return out


def fit_martingale_constant(noise, increments, flavor=HILBERT):
    """Empirical c with E sup_t ||int G dW||^2 = c * int ||G||_gamma^2 dt."""
    paths = ito_integral(noise, increments)
    sup_sq = (flavor.norm(paths) ** 2).max(axis=1)
    mc = 0 if flavor.kind == "hilbert" else 2000
    per_cell = [gamma_norm(g, flavor, mc, j)[0] ** 2 for j, g in enumerate(noise.levels)]
    budget = float(np.dot(per_cell, increments.steps))
    if budget == 0:
        return 0.0, 0.0
    return float(sup_sq.mean() / budget), float(sup_sq.std(ddof=1) / math.sqrt(sup_sq.size) / budget)


def coarsen_increments(increments: WienerIncrements, lam, factor=2):
    """Merge groups of ``factor`` cells; exact for the OU cell integrals with rates ``lam``."""
    n = increments.dw.shape[1]
    if n % factor:
        raise ShapeError(f"{n} steps cannot be merged in groups of {factor}")
    lam = np.asarray(lam, dtype=float)
    fine_z = ou_cell_integrals(lam, increments)
    h = increments.steps
    grid = increments.grid[::factor]
    dw = increments.dw.reshape(increments.replicas, n // factor, factor, -1).sum(axis=2)
    z = np.zeros_like(dw)
    for i in range(factor):
        tail = np.add.reduceat(h, np.arange(i + 1, n, factor)) if i + 1 < factor else 0.0
        sub = fine_z[:, i::factor]
        # decay from the end of sub-cell i to the end of its coarse cell
        rest = h.reshape(-1, factor)[:, i + 1:].sum(axis=1)
        z += np.exp(-lam * rest[:, None]) * sub
    hc = np.diff(grid)[:, None]
    _, cov, cond = ou_cell_moments(lam[None, :], hc)
    aux = (z - cov / hc * dw) / np.sqrt(cond)
    return WienerIncrements(grid, dw, aux, increments.seed, increments.replica_ids)


def refine_increments(increments: WienerIncrements, lam, seed):
    """Split every cell at its midpoint, sampling the sub-cell pairs (dW, Z) conditionally.

    The merged fine increments reproduce the coarse (dW, Z) exactly, so a
    solution on the refined grid shares the coarse noise path. Diagonal noise only.
    """
    lam = np.asarray(lam, dtype=float)[None, :]
    grid = increments.grid
    mid = 0.5 * (grid[:-1] + grid[1:])
    fine = np.empty(2 * grid.size - 1)
    fine[0::2], fine[1::2] = grid, mid
    h = np.diff(grid)[:, None]
    ha = (mid - grid[:-1])[:, None]
    hb = h - ha
    _, ca, conda = ou_cell_moments(lam, ha)
    _, cb, condb = ou_cell_moments(lam, hb)
    _, cc, condc = ou_cell_moments(lam, h)
    e = np.exp(-lam * hb)
    sa, sb, sc = np.sqrt(ha), np.sqrt(hb), np.sqrt(condc)
    psi = lambda x: np.where(x < 1e-8, 1 - x / 2, -np.expm1(-x) / np.maximum(x, 1e-300))
    # observation rows in whitened sub-cell coordinates g = (ga1, ga2, gb1, gb2)
    row1 = np.stack(np.broadcast_arrays(sa / np.sqrt(h), 0 * lam, sb / np.sqrt(h), 0 * lam), -1)
    diff = e * psi(lam * ha) - psi(lam * hb)
    row2 = np.stack(np.broadcast_arrays(
        hb * sa / h * diff / sc,
        e * np.sqrt(conda) / sc,
        -ha * sb / h * diff / sc,
        np.sqrt(condb) / sc), -1)
    m = np.stack([row1, row2], axis=-2)                      # (N, K, 2, 4)
    gram = m @ np.swapaxes(m, -1, -2)
    pinv = np.swapaxes(m, -1, -2) @ np.linalg.inv(gram)      # (N, K, 4, 2)
    proj = np.eye(4) - pinv @ m
    obs = np.stack([increments.dw / np.sqrt(h), increments.aux], axis=-1)
    r, n, k = increments.dw.shape
    fresh = np.empty((r, n, k, 4))
    for i, rid in enumerate(increments.replica_ids):
        fresh[i] = replica_rng(seed, rid, BRIDGE_STREAM).standard_normal((n, k, 4))
    g = np.einsum("nkij,rnkj->rnki", pinv, obs) + np.einsum("nkij,rnkj->rnki", proj, fresh)
    dw = np.empty((r, 2 * n, k))
    aux = np.empty_like(dw)
    dw[:, 0::2], aux[:, 0::2] = g[..., 0] * sa, g[..., 1]
    dw[:, 1::2], aux[:, 1::2] = g[..., 2] * sb, g[..., 3]
    return WienerIncrements(fine, dw, aux, increments.seed, increments.replica_ids)
