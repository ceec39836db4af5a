"""Experiment configuration files (YAML)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import ConfigError
from .presets import PRESETS

EXPONENT_KEYS = ("beta", "sigma", "delta", "eta")
PROBLEM_KEYS = ("modes", "horizon", "spatial_points", "amplitude", "eps", "low_modes", "b0", "length")


@dataclass
class ExperimentConfig:
    """Preset name plus overrides. Unset values fall back to the preset defaults."""

    preset: str
    seed: int = 0
    replicas: int | None = None
    workers: int = 1
    n_steps: int | None = None
    grading: float | None = None
    p: float = 2.0
    exponents: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    suites: list | None = None
    solution_replicas: int = 4
    export_increments: bool = False
    output: str = "out"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.p != 2.0:
            raise ConfigError("only the Hilbert setting p = 2 is solved; L^p norms are available as diagnostics")
        for key in self.exponents:
            if key not in EXPONENT_KEYS:
                raise ConfigError(f"unknown exponent {key!r}")
        for key in self.problem:
            if key not in PROBLEM_KEYS:
                raise ConfigError(f"unknown problem parameter {key!r}")
        for name in ("replicas", "n_steps", "workers", "solution_replicas"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < (0 if name == "solution_replicas" else 1)):
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_steps is not None and self.n_steps % 4:
            raise ConfigError("n_steps must be divisible by 4 so nested grids exist")

    @classmethod
    def from_mapping(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "preset" not in data:
            raise ConfigError("config needs a preset")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_mapping(data or {})

    def to_dict(self):
        return asdict(self)

    def problem_params(self):
        return {**self.problem, **self.exponents}
