"""Named example problems: cable equation, divergence-form equation and a semilinear equation on a large box."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .function_spaces import graded_grid, make_forcing
from .linear import InitialCondition, LinearProblem
from .noise import make_noise
from .semilinear import (SemilinearProblem, bounded_range_nonlinearity, linear_shift_nonlinearity,
                         saturating_nonlinearity, zero_nonlinearity)
from .spectral import make_example_operator

# knots used only to anchor formula-backed paths; solvers resample them
_ANCHOR_NODES = 64


@dataclass
class Experiment:
    """A problem plus the grid and Monte Carlo settings it is meant to run with."""

    name: str
    problem: object
    n_steps: int
    grading: float
    replicas: int
    suites: tuple
    settings: dict = field(default_factory=dict)

    @property
    def is_semilinear(self):
        return isinstance(self.problem, SemilinearProblem)

    @property
    def linear(self):
        return self.problem.linear if self.is_semilinear else self.problem


def _decaying(mode_count, power, scale=1.0):
    return scale / (np.arange(mode_count) + 1.0) ** power


def _forcing(op, beta, sigma, horizon, direction):
    grid = graded_grid(horizon, _ANCHOR_NODES, 2.0, include_zero=False)
    return make_forcing("power_profile", grid, direction, beta, sigma,
                        profile=lambda t, s=sigma: t ** s, horizon=horizon)


def _noise(op, beta, sigma, delta, scales, horizon):
    return make_noise(graded_grid(horizon, 8, 2.0), scales, beta, sigma, delta)


def _cable_data(modes, beta, sigma, delta, horizon, noise_power=1.0, smoothing=True):
    op = make_example_operator("cable_neumann", modes)
    direction = np.zeros(modes)
    direction[:4] = [1.0, 0.5, 0.25, 0.125][:min(4, modes)]
    f1 = _forcing(op, beta, sigma, horizon, direction)
    scales = _decaying(modes, noise_power)
    if smoothing:
        scales = scales * op.eigenvalues ** -delta
    noise = _noise(op, beta, sigma, delta if smoothing else None, scales, horizon)
    xi = InitialCondition(_decaying(modes, 2.5), _decaying(modes, 2.5, 0.5))
    return op, f1, noise, xi


def zero(modes=8, beta=0.4, sigma=0.2, delta=0.8, horizon=1.0, **_):
    op = make_example_operator("cable_neumann", modes)
    problem = LinearProblem(op, beta, sigma, InitialCondition.zeros(modes), None, None, horizon, "zero")
    return Experiment("zero", problem, 64, 2.0, 500,
                      ("strict_convergence", "uniqueness", "bounds"),
                      {"bounds": ["H12.7", "H10.5"]})


def cable_linear(modes=32, beta=0.4, sigma=0.2, delta=0.8, horizon=1.0, **_):
    op, f1, noise, xi = _cable_data(modes, beta, sigma, delta, horizon)
    problem = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "cable-linear")
    return Experiment("cable-linear", problem, 512, 3.0, 2000,
                      ("strict_convergence", "uniqueness", "e100", "w_theta", "bounds", "normality"),
                      {"bounds": ["H12.7", "H10.5", "H17.6"], "regularity_steps": 256,
                       "convergence_replicas": 40})


def cable_mild_gb(modes=32, beta=0.4, sigma=0.2, horizon=1.0, **_):
    op, f1, noise, xi = _cable_data(modes, beta, sigma, None, horizon, smoothing=False)
    problem = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "cable-mild-gb")
    return Experiment("cable-mild-gb", problem, 256, 2.0, 2000, ("w_theta", "bounds", "normality"),
                      {"bounds": ["H17.6"], "regularity_steps": 256})


def divform_gb(modes=32, beta=0.2, sigma=0.1, horizon=1.0, b0=0.5, **_):
    op = make_example_operator("dirichlet_divform", modes, length=math.pi, b0=b0)
    direction = np.zeros(modes)
    direction[:3] = [1.0, -0.5, 0.25][:min(3, modes)]
    f1 = _forcing(op, beta, sigma, horizon, direction)
    noise = _noise(op, beta, sigma, None, _decaying(modes, 1.0), horizon)
    xi = InitialCondition(_decaying(modes, 2.0), _decaying(modes, 2.0, 0.25))
    problem = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "divform-gb")
    return Experiment("divform-gb", problem, 256, 2.0, 2000, ("w_theta", "bounds", "normality"),
                      {"bounds": ["H17.6"], "regularity_steps": 256})


def semilinear_p48(modes=32, beta=0.3, sigma=0.1, delta=0.8, eta=0.35, horizon=1.0, amplitude=0.5,
                   spatial_points=128, length=4 * math.pi, **_):
    op = make_example_operator("whole_line_truncated", modes, length=length)
    x, w, basis = op.spatial_grid(spatial_points)
    bump = np.exp(-((x - 0.5 * length) / 1.5) ** 2)
    direction = op.project(bump, spatial_points)
    f1 = _forcing(op, beta, sigma, horizon, direction)
    noise = _noise(op, beta, sigma, delta, _decaying(modes, 1.0) * op.eigenvalues ** -delta, horizon)
    xi = InitialCondition(0.5 * direction, _decaying(modes, 2.0, 0.2))
    lin = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "semilinear-p48")
    f2 = saturating_nonlinearity(op, amplitude, eta, spatial_points)
    problem = SemilinearProblem(lin, f2, "smoothing", "semilinear-p48")
    return Experiment("semilinear-p48", problem, 128, 2.0, 2000,
                      ("picard", "uniqueness", "bounds", "dependence"),
                      {"bounds": ["Ph2"], "contraction_target": 0.5})


def semilinear_tanh(modes=32, beta=0.4, sigma=0.2, delta=0.8, eta=0.42, horizon=1.0, amplitude=0.5,
                    low_modes=4, spatial_points=128, **_):
    op, f1, noise, xi = _cable_data(modes, beta, sigma, delta, horizon)
    lin = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "semilinear-tanh")
    f2 = bounded_range_nonlinearity(op, amplitude, eta, low_modes, spatial_points)
    problem = SemilinearProblem(lin, f2, "smoothing", "semilinear-tanh")
    return Experiment("semilinear-tanh", problem, 256, 3.0, 2000, ("picard", "strict_upgrade", "bounds"),
                      {"bounds": ["H23.4"], "contraction_target": 0.5, "convergence_replicas": 40})


def linear_shift(modes=16, beta=0.4, sigma=0.2, delta=0.8, eta=0.42, horizon=1.0, eps=0.05, **_):
    op, f1, noise, xi = _cable_data(modes, beta, sigma, delta, horizon)
    lin = LinearProblem(op, beta, sigma, xi, f1, noise, horizon, "linear-shift")
    problem = SemilinearProblem(lin, linear_shift_nonlinearity(op, eps, eta), "smoothing", "linear-shift")
    return Experiment("linear-shift", problem, 256, 2.0, 200, ("picard", "shift_oracle"),
                      {"eps": eps, "contraction_target": 0.5})


def zero_semilinear(modes=8, beta=0.4, sigma=0.2, eta=0.42, horizon=1.0, **_):
    op = make_example_operator("cable_neumann", modes)
    lin = LinearProblem(op, beta, sigma, InitialCondition.zeros(modes), None, None, horizon, "zero-semilinear")
    problem = SemilinearProblem(lin, zero_nonlinearity(eta), "smoothing", "zero-semilinear")
    return Experiment("zero-semilinear", problem, 64, 2.0, 100, ("picard",), {})


PRESETS = {
    "zero": zero,
    "cable-linear": cable_linear,
    "cable-mild-gb": cable_mild_gb,
    "divform-gb": divform_gb,
    "semilinear-p48": semilinear_p48,
    "semilinear-tanh": semilinear_tanh,
    "linear-shift": linear_shift,
    "zero-semilinear": zero_semilinear,
}


def build(name, **params):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    params = {k: v for k, v in params.items() if v is not None}
    return factory(**params)
