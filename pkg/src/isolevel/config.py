"""Planner configuration and its text-file form."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Missing or invalid configuration value; ``key`` names it."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class PlannerConfig:
    """Cutter, tolerance and solver settings (lengths in mm).

    ``eps_g`` is the gradient-norm floor; ``None`` means 1e-3 times the
    median target gradient norm, resolved against the mesh curvature.
    """

    kappa_c: float
    h: float = 1.0
    lam: float = 0.0
    chord_tol: float = 0.01
    eps_g: float | None = None
    max_outer: int = 4
    max_inner: int = 60
    grad_tol: float = 1e-6
    barrier_mu0: float = 1e-3
    barrier_shrink: float = 0.1
    deterministic_reduction: bool = True
    clearance: float = 5.0
    feed: float = 600.0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    REQUIRED = ("kappa_c",)

    def __post_init__(self):
        checks = {
            "kappa_c": self.kappa_c > 0,
            "h": self.h > 0,
            "lam": self.lam >= 0,
            "chord_tol": self.chord_tol >= 0,
            "max_outer": self.max_outer >= 1,
            "max_inner": self.max_inner >= 1,
            "grad_tol": self.grad_tol > 0,
            "barrier_mu0": self.barrier_mu0 >= 0,
            "barrier_shrink": 0 < self.barrier_shrink < 1,
        }
        if self.eps_g is not None:
            checks["eps_g"] = self.eps_g > 0
        for key, ok in checks.items():
            value = getattr(self, key)
            if not ok or (isinstance(value, float) and not math.isfinite(value)):
                raise ConfigError(f"invalid value for {key!r}: {value!r}", key)

    @property
    def cutter_radius(self) -> float:
        return 1.0 / self.kappa_c

    def resolve_eps_g(self, curvature) -> float:
        """Concrete gradient floor for a mesh's curvature data."""
        if self.eps_g is not None:
            return self.eps_g
        from .energy import median_target

        return 1e-3 * median_target(curvature, self.kappa_c)

    def replace(self, **changes) -> "PlannerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "extra"}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        aliases = {"lambda": "lam", "kc": "kappa_c", "scallop_height": "h"}
        clean, extra = {}, {}
        for k, v in data.items():
            k = aliases.get(k, k)
            (clean if k in known else extra)[k] = v
        for key in cls.REQUIRED:
            if clean.get(key) is None:
                raise ConfigError(f"missing config key {key!r}", key)
        try:
            return cls(**clean, extra=extra)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    """Read a YAML or JSON mapping; validation happens in ``from_dict``."""
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data
