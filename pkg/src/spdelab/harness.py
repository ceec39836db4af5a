"""Run a configured experiment: solve, run its verification suites and write the artifact directory."""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
import scipy
import sklearn

from . import __version__
from .config import ExperimentConfig
from .errors import DivergenceError
from .function_spaces import graded_grid
from .linear import solve_linear, strict_residual, mild_residual, uniqueness_probe
from .noise import WienerIncrements, coarsen_increments
from .presets import Experiment, build
from .regularity import (AuditTable, bound_audit, linear_bound_data, normality_check, verify_e100,
                         verify_w_theta_regularity, write_audits_csv)
from .semilinear import (bound_data, continuous_dependence, dependence_sweep, kappa_and_radius,
                         linear_shift_oracle, local_time, picard_iterate, strict_upgrade_check,
                         xi_norm_state)

SCHEMA_VERSION = 1
ORDER_TARGET = 0.9
UPGRADE_RATIO = 1.8
# settings that must not change any output byte; reported in timing.json instead
RUNTIME_KEYS = ("output", "workers")


@dataclass
class RunResult:
    summary: dict
    audits: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.summary["passed"]


def _clean(value):
    """JSON-safe copy with floats kept at full precision and non-finite values as strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def prepare(config: ExperimentConfig):
    """Build the experiment and check its exponent windows; nothing is solved here."""
    exp = build(config.preset, **config.problem_params())
    if config.n_steps is not None:
        exp.n_steps = config.n_steps
    if config.grading is not None:
        exp.grading = config.grading
    if config.replicas is not None:
        exp.replicas = config.replicas
    if config.suites is not None:
        exp.suites = tuple(config.suites)
    if exp.is_semilinear:
        exp.problem.validate()
    else:
        exp.problem.validate(strict=exp.problem.has_noise and exp.problem.delta is not None)
    return exp


def _h_modes(exp):
    noise = exp.linear.noise
    return noise.h_mode_count if noise is not None else exp.linear.op.mode_count


def _main_grid(exp, horizon):
    return graded_grid(horizon, exp.n_steps, exp.grading)


def _nested_residuals(exp, increments, replicas, solve):
    """Strict residuals on the main grid and two nested coarsenings sharing one noise path."""
    inc = increments.select(np.arange(min(replicas, increments.replicas)))
    residuals, mild = [], []
    lam = exp.linear.op.eigenvalues
    for level in range(3):
        sol = solve(inc)
        residuals.append(strict_residual(sol))
        mild.append(mild_residual(sol) if not exp.is_semilinear else float("nan"))
        if level < 2:
            inc = coarsen_increments(inc, lam, 2)
    return residuals, mild


def _orders(residuals):
    r = np.asarray(residuals)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(r[1:] / r[:-1])


class Runner:
    def __init__(self, config: ExperimentConfig, increments: WienerIncrements | None = None):
        self.config = config
        self.replay = increments
        self.exp: Experiment = prepare(config)
        self.suites = {}
        self.audits: list[AuditTable] = []
        self.fits = []
        self.timing = {}
        self.meta = {}
        self.trace = None

    # main solve

    def solve(self):
        exp, cfg = self.exp, self.config
        start = time.perf_counter()
        if exp.is_semilinear:
            target = exp.settings.get("contraction_target", 1.0)
            kappa = kappa_and_radius(exp.problem)[0]
            lt = local_time(exp.problem, kappa, contraction_target=target)
            self.kappa, self.local_time = kappa, lt
            self.meta["local_time"] = {"t_loc": lt.t_loc, "binding": lt.binding, "kappa": kappa,
                                       "contraction_factor": lt.contraction, "margins": lt.margins}
            self.grid = _main_grid(exp, lt.t_loc)
        else:
            self.grid = _main_grid(exp, exp.linear.horizon)
        self.increments = self._increments(self.grid, exp.replicas)
        if exp.is_semilinear:
            try:
                self.sol, self.trace = picard_iterate(exp.problem, self.grid, exp.replicas, cfg.seed,
                                                      increments=self.increments, kappa=self.kappa,
                                                      t_loc=self.local_time.t_loc, workers=cfg.workers)
            except DivergenceError as exc:
                self.sol, self.trace = None, exc.trace
        else:
            strict = exp.linear.delta is not None or not exp.linear.has_noise
            self.sol = solve_linear(exp.problem, self.grid, exp.replicas, cfg.seed, strict=strict,
                                    increments=self.increments, workers=cfg.workers)
        self.timing["solve"] = time.perf_counter() - start

    def _increments(self, grid, replicas):
        if self.replay is None:
            return WienerIncrements.sample(grid, _h_modes(self.exp), replicas, self.config.seed)
        inc = self.replay
        from .errors import ShapeError
        if inc.grid.shape != grid.shape or not np.allclose(inc.grid, grid):
            raise ShapeError("replayed increments do not match the configured grid")
        if inc.h_mode_count != _h_modes(self.exp) or inc.replicas != replicas:
            raise ShapeError("replayed increments do not match the configured modes or replicas")
        return inc

    # suites

    def run_suites(self):
        for name in self.exp.suites:
            start = time.perf_counter()
            handler = getattr(self, f"_suite_{name}", None)
            if handler is None:
                from .errors import ConfigError
                raise ConfigError(f"unknown suite {name!r}")
            if self.sol is None and name != "picard":
                self.suites[name] = {"passed": False, "reason": "no converged solution"}
            else:
                self.suites[name] = handler()
            self.timing[name] = time.perf_counter() - start

    def _suite_strict_convergence(self):
        exp, cfg = self.exp, self.config
        replicas = exp.settings.get("convergence_replicas", 40)
        if exp.is_semilinear:
            def solve(inc):
                return picard_iterate(exp.problem, inc.grid, inc.replicas, cfg.seed, tol=1e-10,
                                      increments=inc, kappa=self.kappa)[0]
        else:
            def solve(inc):
                return solve_linear(exp.problem, inc.grid, inc.replicas, cfg.seed, strict=True, increments=inc)
        residuals, mild = _nested_residuals(exp, self.increments, replicas, solve)
        if max(residuals) <= 1e-13:
            return {"passed": True, "residuals": residuals, "orders": [], "mild_residuals": mild}
        orders = _orders(residuals)
        return {"passed": bool(np.all(orders >= ORDER_TARGET)), "residuals": residuals,
                "orders": orders, "mild_residuals": mild, "steps": [exp.n_steps // 2 ** i for i in range(3)]}

    def _suite_uniqueness(self):
        exp, cfg = self.exp, self.config
        replicas = min(50, self.increments.replicas)
        inc = self.increments.select(np.arange(replicas))
        if exp.is_semilinear:
            tol = 1e-6
            a, _ = picard_iterate(exp.problem, self.grid, replicas, cfg.seed, tol=tol, increments=inc,
                                  kappa=self.kappa)
            b, _ = picard_iterate(exp.problem, self.grid, replicas, cfg.seed, tol=tol, increments=inc,
                                  kappa=self.kappa, initial="semigroup")
            gap = xi_norm_state(exp.problem.op, a.x - b.x, self.grid, exp.problem.beta, exp.problem.eta).xi_norm
            return {"passed": gap < 2 * tol, "xi_distance": gap, "tolerance": 2 * tol}
        rep = uniqueness_probe(exp.problem, self.grid, replicas, cfg.seed, increments=inc)
        return {"passed": rep.passed, "gap": rep.gap, "tolerance": rep.tolerance,
                "residuals": [rep.residual_first, rep.residual_second]}

    def _uniform_ensemble(self):
        if not hasattr(self, "_uniform"):
            exp, cfg = self.exp, self.config
            steps = exp.settings.get("regularity_steps", 256)
            grid = graded_grid(exp.linear.horizon, steps, 1.0)
            strict = exp.linear.delta is not None
            self._uniform = solve_linear(exp.linear, grid, exp.replicas, cfg.seed, strict=strict,
                                         workers=cfg.workers)
        return self._uniform

    def _record_fit(self, rep):
        self.fits.append(rep)
        out = {"passed": rep.passed, "slope": rep.fit.slope, "slope_se": rep.fit.slope_se, "target": rep.target}
        if rep.constant is not None:
            out.update(constant=rep.constant, excess=rep.excess)
        return out

    def _suite_e100(self):
        sol = self._uniform_ensemble()
        rep = verify_e100(sol, linear_bound_data(self.exp.linear))
        return self._record_fit(rep)

    def _suite_w_theta(self):
        sol = self._uniform_ensemble()
        beta = self.exp.linear.beta
        cases = {}
        for theta in (0.0, beta / 2, beta):
            rep = verify_w_theta_regularity(sol, theta, beta)
            cases[rep.label] = self._record_fit(rep)
        return {"passed": all(c["passed"] for c in cases.values()), "cases": cases}

    def _suite_normality(self):
        sol = self._uniform_ensemble()
        theta_high = 1.0 if self.exp.linear.delta is not None else self.exp.linear.beta
        reps = [normality_check(sol, 0.0), normality_check(sol, theta_high)]
        return {"passed": all(r.passed for r in reps),
                "tests": {r.label: {"statistic": r.statistic, "pvalue": r.pvalue} for r in reps}}

    def _bound_data(self, name):
        exp = self.exp
        if exp.is_semilinear:
            return bound_data(exp.problem, self.kappa ** 2)
        return linear_bound_data(exp.problem, strict_noise=name != "H17.6")

    def _suite_bounds(self):
        verdicts = {}
        for name in self.exp.settings.get("bounds", []):
            table = bound_audit(name, self.sol, self._bound_data(name))
            self.audits.append(table)
            verdicts[name] = {"passed": table.passed, "worst_margin": table.worst_margin}
        return {"passed": all(v["passed"] for v in verdicts.values()), "estimates": verdicts}

    def _suite_picard(self):
        trace = self.trace
        rows = trace.rows
        later = [r for r in rows[1:] if math.isfinite(r["ratio"])]
        contraction_ok = all(r["ratio"] <= r["bound"] + 3 * (r["ratio_se"] if math.isfinite(r["ratio_se"]) else 0)
                             for r in later)
        ball_ok = all(r["in_ball"] for r in rows)
        bound = rows[0]["bound"] if rows else float("nan")
        return {"passed": bool(trace.converged and contraction_ok and ball_ok
                               and bound <= self.exp.settings.get("contraction_target", 1.0)),
                "converged": trace.converged, "iterations": trace.iterations, "bound": bound,
                "max_ratio": max((r["ratio"] for r in later), default=float("nan")),
                "ball_invariant": ball_ok}

    def _suite_strict_upgrade(self):
        exp = self.exp
        rep = strict_upgrade_check(exp.problem, self.sol)
        table = AuditTable("H23.4", rep.times, rep.lhs, rep.lhs_se, rep.rhs)
        if not any(t.name == "H23.4" for t in self.audits):
            self.audits.append(table)
        conv = self._suite_strict_convergence()
        ratios = 2.0 ** np.asarray(conv["orders"]) if len(conv["orders"]) else np.array([])
        small_ok = bool(np.all(np.isfinite(rep.small_t_weighted)))
        return {"passed": bool(rep.passed and np.all(ratios >= UPGRADE_RATIO) and small_ok),
                "range_max": rep.range_max, "range_bound": rep.range_bound, "residual": rep.residual,
                "residual_ratios": ratios, "small_t_weighted": rep.small_t_weighted}

    def _suite_shift_oracle(self):
        rep = linear_shift_oracle(self.exp.problem, self.exp.settings["eps"], self.sol)
        return {"passed": rep.relative_error < 1e-3, "relative_error": rep.relative_error,
                "unshifted_gap": rep.base_gap}

    def _suite_dependence(self):
        exp, cfg = self.exp, self.config
        problem = exp.problem
        replicas = min(exp.settings.get("dependence_replicas", 200), self.increments.replicas)
        inc = self.increments.select(np.arange(replicas))
        direction = np.zeros(problem.op.mode_count)
        direction[:3] = [1.0, 0.5, 0.25][:min(3, direction.size)]
        sweep = dependence_sweep(problem, direction, self.grid, replicas=replicas, seed=cfg.seed,
                                 increments=inc)
        same_a, _ = picard_iterate(problem, self.grid, replicas, cfg.seed, increments=inc, kappa=self.kappa)
        same_b, _ = picard_iterate(problem, self.grid, replicas, cfg.seed, increments=inc, kappa=self.kappa)
        identical = continuous_dependence(same_a, same_b, problem, problem)
        dep = sweep.reports[0]
        self.audits.append(bound_audit("Eq22", dependence=dep))
        return {"passed": bool(sweep.passed and identical.gap_norm == 0 and dep.passed),
                "slope": sweep.slope, "halving_ratio": sweep.halving_ratio, "gaps": sweep.gaps,
                "eps": sweep.eps, "identical_gap": identical.gap_norm, "c_fit": dep.c_fit,
                "premise_holds": dep.premise_holds,
                "gronwall": None if dep.gronwall is None else
                {"c_min": dep.gronwall.c_min, "c_bound": dep.gronwall.c_bound}}

    # output

    def summary(self):
        exp, cfg = self.exp, self.config
        lin = exp.linear
        resolved = {
            "n_steps": exp.n_steps, "grading": exp.grading, "replicas": exp.replicas,
            "horizon": lin.horizon, "modes": lin.op.mode_count, "operator": lin.op.name,
            "beta": lin.beta, "sigma": lin.sigma, "delta": lin.delta,
            "eta": exp.problem.eta if exp.is_semilinear else None,
            "suites": list(exp.suites), "settings": exp.settings,
        }
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "preset": cfg.preset,
            "seed": cfg.seed,
            "config": {k: v for k, v in cfg.to_dict().items() if k not in RUNTIME_KEYS},
            "resolved": resolved,
            "versions": {"spdelab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "scikit-learn": sklearn.__version__, "python": platform.python_version()},
            **self.meta,
            "suites": self.suites,
            "passed": all(s["passed"] for s in self.suites.values()),
        })

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        summary = self.summary()
        if self.sol is not None:
            self.sol.write_csv(os.path.join(out_dir, "solutions.csv"), self.config.solution_replicas)
        write_audits_csv(self.audits, os.path.join(out_dir, "audits.csv"))
        _write_fits(self.fits, os.path.join(out_dir, "holder_fits.csv"))
        if self.trace is not None:
            self.trace.write_csv(os.path.join(out_dir, "trace.csv"))
        if self.config.export_increments:
            self.increments.write_csv(os.path.join(out_dir, "increments.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "timing.json"), "w") as fh:
            info = {"seconds": {k: round(v, 3) for k, v in self.timing.items()},
                    "workers": self.config.workers, "replayed": self.replay is not None}
            json.dump(info, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary


def _write_fits(reports, filename):
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "lag", "mean_sq", "mean_sq_se", "max_ratio", "slope", "slope_se",
                         "target", "passed"])
        for rep in reports:
            fit = rep.fit
            for i, lag in enumerate(fit.lags):
                ratio = float(np.max(fit.per_start[i] / lag ** rep.target))
                writer.writerow([rep.label, repr(float(lag)), repr(float(fit.mean_sq[i])),
                                 repr(float(fit.mean_sq_se[i])), repr(ratio), repr(fit.slope),
                                 repr(fit.slope_se), repr(float(rep.target)), int(rep.passed)])


def run(config: ExperimentConfig, out_dir=None, increments=None):
    """Solve, run every configured suite and write the artifacts; returns the RunResult."""
    runner = Runner(config, increments)
    start = time.perf_counter()
    runner.solve()
    runner.run_suites()
    runner.timing["total"] = time.perf_counter() - start
    summary = runner.write(out_dir or config.output)
    return RunResult(summary, runner.audits, runner.fits, runner.timing)
