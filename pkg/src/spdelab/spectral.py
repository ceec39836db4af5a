"""Spectral calculus for positive self-adjoint operators on a truncated eigenbasis.

An operator is stored through its eigenvalues and an evaluator for the
orthonormal eigenfunctions. States are coefficient vectors in that basis, so
the semigroup, fractional powers and the Yosida approximation act mode by mode.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError

# relative slack used when a bound can be attained exactly
BOUND_RTOL = 1e-12


def iota(theta):
    """Sharp constant in ``sup_lam lam**theta * exp(-lam*t) <= iota * t**-theta``.

    Equals ``(theta/e)**theta`` for theta > 0 and 1 for theta = 0.
    """
    theta = float(theta)
    if theta < 0:
        raise DomainError(f"theta must be nonnegative, got {theta}")
    if theta == 0.0:
        return 1.0
    return math.exp(theta * (math.log(theta) - 1.0))


class NormFlavor:
    """How the state-space norm is evaluated from modal coefficients."""

    kind = "abstract"

    def norm(self, coeffs):
        raise NotImplementedError


@dataclass(frozen=True)
class HilbertNorm(NormFlavor):
    kind = "hilbert"

    def norm(self, coeffs):
        return np.linalg.norm(np.asarray(coeffs, dtype=float), axis=-1)

    def describe(self):
        return {"kind": "hilbert"}


HILBERT = HilbertNorm()


@dataclass(frozen=True, eq=False)
class LpNorm(NormFlavor):
    """Discrete L^p norm of the synthesized function on a uniform spatial grid."""

    op: "SpectralOperator"
    p: float = 2.0
    grid_size: int = 256
    kind = "lp"

    def __post_init__(self):
        if self.p < 1:
            raise DomainError(f"p must be >= 1, got {self.p}")
        if self.grid_size <= self.op.mode_count + 1:
            raise DomainError("spatial grid must have more points than retained modes")

    def __eq__(self, other):
        return (isinstance(other, LpNorm) and other.p == self.p
                and other.grid_size == self.grid_size and other.op is self.op)

    def __hash__(self):
        return hash((self.p, self.grid_size, id(self.op)))

    def norm(self, coeffs):
        points, weights, basis = self.op.spatial_grid(self.grid_size)
        values = np.asarray(coeffs, dtype=float) @ basis
        return (np.abs(values) ** self.p @ weights) ** (1.0 / self.p)

    def describe(self):
        return {"kind": "lp", "p": self.p, "grid_size": self.grid_size}


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Positive self-adjoint operator given by its spectrum.

    Parameters
    ----------
    eigenvalues : array of shape (K,)
        Strictly positive, nondecreasing.
    eigenfunction : callable, optional
        ``eigenfunction(modes, x)`` returns an array (len(modes), len(x)) of
        orthonormal eigenfunction values on ``[0, domain_length]``.
    domain_length : float
    modes : array of int, optional
        Labels of the retained modes, used only by the eigenfunction evaluator.
    """

    eigenvalues: np.ndarray
    eigenfunction: Callable | None = None
    domain_length: float = 1.0
    modes: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ShapeError("eigenvalues must be a nonempty 1-d array")
        if not np.all(np.isfinite(lam)) or lam.min() <= 0:
            raise DomainError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) < 0):
            raise DomainError("eigenvalues must be sorted nondecreasingly")
        if self.domain_length <= 0:
            raise DomainError("domain length must be positive")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        modes = np.arange(1, lam.size + 1) if self.modes is None else np.asarray(self.modes)
        object.__setattr__(self, "modes", modes)

    @property
    def mode_count(self):
        return self.eigenvalues.size

    @property
    def decay_rate(self):
        """Exponential decay rate of the semigroup (smallest eigenvalue)."""
        return float(self.eigenvalues[0])

    def _check(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1:] != (self.mode_count,):
            raise ShapeError(f"expected {self.mode_count} modal coefficients, got shape {coeffs.shape}")
        return coeffs

    def semigroup(self, t, coeffs):
        if t < 0:
            raise DomainError(f"time must be nonnegative, got {t}")
        return np.exp(-self.eigenvalues * t) * self._check(coeffs)

    def power(self, theta, coeffs):
        return self.eigenvalues ** theta * self._check(coeffs)

    def power_norm(self, theta):
        """Operator norm of A**theta on the truncated spectrum."""
        return float(np.max(self.eigenvalues ** theta))

    def spatial_grid(self, grid_size=256):
        """Uniform grid on [0, L] with trapezoid weights and the sampled basis."""
        return self._spatial_cache(int(grid_size))

    @cached_property
    def _grid_cache(self):
        return {}

    def _spatial_cache(self, grid_size):
        if grid_size not in self._grid_cache:
            if self.eigenfunction is None:
                raise DomainError("operator has no eigenfunction evaluator")
            x = np.linspace(0.0, self.domain_length, grid_size)
            w = np.full(grid_size, self.domain_length / (grid_size - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            basis = np.asarray(self.eigenfunction(self.modes, x), dtype=float)
            for arr in (x, w, basis):
                arr.setflags(write=False)
            self._grid_cache[grid_size] = (x, w, basis)
        return self._grid_cache[grid_size]

    def synthesize(self, coeffs, grid_size=256):
        _, _, basis = self.spatial_grid(grid_size)
        return self._check(coeffs) @ basis

    def project(self, values, grid_size=256):
        """Discrete L2 projection of grid values onto the retained modes."""
        _, w, basis = self.spatial_grid(grid_size)
        return (np.asarray(values, dtype=float) * w) @ basis.T

    def lp(self, p=2.0, grid_size=256):
        return LpNorm(self, p, grid_size)


@dataclass
class ModalVector:
    """A state expressed by eigenbasis coefficients together with its norm flavor."""

    coeffs: np.ndarray
    flavor: NormFlavor = field(default=HILBERT)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    def norm(self):
        return float(self.flavor.norm(self.coeffs))

    def __sub__(self, other):
        if other.flavor != self.flavor:
            raise ShapeError("cannot mix norm flavors")
        return ModalVector(self.coeffs - other.coeffs, self.flavor)


def _unwrap(x):
    if isinstance(x, ModalVector):
        return x.coeffs, x.flavor
    return np.asarray(x, dtype=float), None


def _wrap(coeffs, flavor):
    return coeffs if flavor is None else ModalVector(coeffs, flavor)


def semigroup_apply(op, t, x):
    """Apply S(t) = exp(-tA); accepts a ModalVector or a coefficient array."""
    coeffs, flavor = _unwrap(x)
    return _wrap(op.semigroup(t, coeffs), flavor)


def frac_power_apply(op, theta, x):
    """Apply A**theta; negative theta is allowed."""
    coeffs, flavor = _unwrap(x)
    return _wrap(op.power(theta, coeffs), flavor)


def semigroup_bound_constant(op, theta):
    """Constant iota_theta with ||A^theta S(t)|| <= iota_theta t^-theta."""
    return iota(theta)


@dataclass
class DefectReport:
    theta: float
    max_ratio: float
    checks: int

    @property
    def passed(self):
        return self.max_ratio <= 1.0 + BOUND_RTOL


def smoothing_defect_bound_check(op, theta, t_grid, n_vectors=20, rng=None):
    """Check ||(S(t)-I)A^-theta x|| <= iota_{1-theta}/theta * t^theta ||x|| on random x."""
    if not 0 < theta <= 1:
        raise DomainError(f"theta must lie in (0, 1], got {theta}")
    rng = np.random.default_rng(rng)
    t = np.asarray(t_grid, dtype=float)
    x = rng.standard_normal((n_vectors, op.mode_count))
    lam = op.eigenvalues
    # defect[t, v, k]
    defect = -np.expm1(-np.outer(t, lam))[:, None, :] * lam ** -theta * x[None]
    lhs = np.linalg.norm(defect, axis=-1)
    rhs = iota(1 - theta) / theta * t[:, None] ** theta * np.linalg.norm(x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, 0.0)
    return DefectReport(theta, float(ratio.max(initial=0.0)), ratio.size)


@dataclass
class SemigroupAuditReport:
    checks: int
    violations: dict
    worst_ratio: dict

    @property
    def passed(self):
        return sum(self.violations.values()) == 0


def audit_semigroup_bounds(op, n_checks=10_000, seed=0):
    """Randomized checks of the smoothing, decay and defect bounds.

    Each check draws a time, an exponent and a state; the three inequalities
    are evaluated on the truncated spectrum against the continuum constants.
    """
    rng = np.random.default_rng(seed)
    lam = op.eigenvalues
    t = 10.0 ** rng.uniform(-6, 1, n_checks)
    theta = rng.uniform(0, 1, n_checks)
    theta_def = rng.uniform(1e-3, 1, n_checks)
    x = rng.standard_normal((n_checks, op.mode_count)) * rng.uniform(0.1, 10, (n_checks, 1))
    xnorm = np.linalg.norm(x, axis=1)
    decay = np.exp(-t[:, None] * lam)

    const = np.array([iota(th) for th in theta])
    smooth = np.linalg.norm(lam ** theta[:, None] * decay * x, axis=1) / (const * t ** -theta * xnorm)
    semigroup = np.linalg.norm(decay * x, axis=1) / (np.exp(-op.decay_rate * t) * xnorm)
    const_def = np.array([iota(1 - th) for th in theta_def]) / theta_def
    defect = (np.linalg.norm(-np.expm1(-t[:, None] * lam) * lam ** -theta_def[:, None] * x, axis=1)
              / (const_def * t ** theta_def * xnorm))

    ratios = {"smoothing": smooth, "decay": semigroup, "defect": defect}
    return SemigroupAuditReport(
        checks=n_checks,
        violations={k: int(np.sum(v > 1 + BOUND_RTOL)) for k, v in ratios.items()},
        worst_ratio={k: float(v.max()) for k, v in ratios.items()},
    )


def yosida_approx(op, n):
    """Operator with eigenvalues lam/(1+lam/n)."""
    if int(n) != n or n < 1:
        raise DomainError(f"Yosida index must be a positive integer, got {n}")
    lam = op.eigenvalues / (1.0 + op.eigenvalues / n)
    return SpectralOperator(lam, op.eigenfunction, op.domain_length, op.modes, f"{op.name}-yosida{n}")


def _cosine_basis(length):
    def evaluate(modes, x):
        modes = np.asarray(modes)[:, None]
        scale = np.where(modes == 0, math.sqrt(1.0 / length), math.sqrt(2.0 / length))
        return scale * np.cos(modes * math.pi * np.asarray(x)[None, :] / length)
    return evaluate


def _sine_basis(length):
    def evaluate(modes, x):
        modes = np.asarray(modes)[:, None]
        return math.sqrt(2.0 / length) * np.sin(modes * math.pi * np.asarray(x)[None, :] / length)
    return evaluate


def make_example_operator(preset, mode_count=64, length=math.pi, b0=1.0):
    """Build one of the named example operators.

    ``cable_neumann``: -d2/dx2 + 1 with Neumann ends, modes k = 0..K-1.
    ``dirichlet_divform``: -d2/dx2 + b0 with Dirichlet ends, modes k = 1..K.
    ``whole_line_truncated``: -d2/dx2 + 1 on a large Dirichlet box standing in for the line.
    """
    if length <= 0:
        raise DomainError(f"domain length must be positive, got {length}")
    if preset == "cable_neumann":
        modes = np.arange(mode_count)
        lam = 1.0 + (modes * math.pi / length) ** 2
        return SpectralOperator(lam, _cosine_basis(length), length, modes, preset)
    if preset in ("dirichlet_divform", "whole_line_truncated"):
        if preset == "whole_line_truncated":
            b0 = 1.0
        if b0 < 0:
            raise DomainError("b0 must be nonnegative")
        modes = np.arange(1, mode_count + 1)
        lam = b0 + (modes * math.pi / length) ** 2
        return SpectralOperator(lam, _sine_basis(length), length, modes, preset)
    raise DomainError(f"unknown operator preset {preset!r}")


def load_spectrum_csv(path, length=1.0):
    """Read a custom spectrum from a two-column CSV (index, eigenvalue).

    Eigenfunctions default to the Dirichlet sine basis labelled by the index column.
    """
    modes, lam = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("index", "#"):
                continue
            modes.append(int(row[0]))
            lam.append(float(row[1]))
    if not lam:
        raise ShapeError(f"no eigenvalues found in {path}")
    order = np.argsort(lam, kind="stable")
    return SpectralOperator(np.asarray(lam)[order], _sine_basis(length), length,
                            np.asarray(modes)[order], "csv")
