"""Experiment configuration: one TOML file describes the dictionary, phantom,
sampling and solver grid for a sweep.  Schema documented in the README."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ExperimentConfig", "load_config"]


@dataclass
class ExperimentConfig:
    # dictionary
    n_excitations: int = 64
    tr_ms: float = 37.0
    t1_range: tuple = (100.0, 5000.0)
    t2_range: tuple = (20.0, 1800.0)
    t1_count: int = 40
    t2_count: int = 40
    # phantom
    height: int = 32
    width: int = 32
    phantom_path: str | None = None
    # sampling
    ratios: list = field(default_factory=lambda: [8, 16])
    shift_rule: str = "cycle"
    noise_norm: float = 0.0
    # solver grid
    epsilons: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    methods: list = field(default_factory=lambda: ["brute", "tree"])
    schedule_variant: str = "constant"
    schedule_mode: str = "multiplicative"
    schedule_decay: float = 0.5
    schedule_gamma: float = 0.1
    max_iters: int = 40
    tolerance: float = 1e-6
    step_size: float | None = None
    # output
    seed: int = 0

    def validate(self) -> None:
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilon grid values must be >= 0")
        for m in self.methods:
            if m not in ("brute", "tree"):
                raise ValueError(f"unknown method {m!r}")
        if self.height < 1 or self.width < 1:
            raise ValueError("phantom grid must be non-empty")
        for r in self.ratios:
            if self.height % r != 0:
                raise ValueError(f"ratio {r} does not divide height {self.height}")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = ExperimentConfig()
    dic = raw.get("dictionary", {})
    cfg.n_excitations = int(dic.get("n_excitations", cfg.n_excitations))
    cfg.tr_ms = float(dic.get("tr_ms", cfg.tr_ms))
    cfg.t1_range = tuple(dic.get("t1_range", cfg.t1_range))
    cfg.t2_range = tuple(dic.get("t2_range", cfg.t2_range))
    cfg.t1_count = int(dic.get("t1_count", cfg.t1_count))
    cfg.t2_count = int(dic.get("t2_count", cfg.t2_count))
    ph = raw.get("phantom", {})
    cfg.height = int(ph.get("height", cfg.height))
    cfg.width = int(ph.get("width", cfg.width))
    cfg.phantom_path = ph.get("path")
    sa = raw.get("sampling", {})
    cfg.ratios = [int(r) for r in sa.get("ratios", cfg.ratios)]
    cfg.shift_rule = sa.get("shift_rule", cfg.shift_rule)
    cfg.noise_norm = float(sa.get("noise_norm", cfg.noise_norm))
    so = raw.get("solver", {})
    cfg.epsilons = [float(e) for e in so.get("epsilons", cfg.epsilons)]
    cfg.methods = list(so.get("methods", cfg.methods))
    cfg.schedule_variant = so.get("schedule_variant", cfg.schedule_variant)
    cfg.schedule_mode = so.get("schedule_mode", cfg.schedule_mode)
    cfg.schedule_decay = float(so.get("schedule_decay", cfg.schedule_decay))
    cfg.schedule_gamma = float(so.get("schedule_gamma", cfg.schedule_gamma))
    cfg.max_iters = int(so.get("max_iters", cfg.max_iters))
    cfg.tolerance = float(so.get("tolerance", cfg.tolerance))
    cfg.step_size = so.get("step_size")
    out = raw.get("output", {})
    cfg.seed = int(out.get("seed", cfg.seed))
    cfg.validate()
    return cfg
