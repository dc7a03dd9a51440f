"""Run configuration: a flat key=value text file with a fixed key set.

Unknown keys are rejected so typos fail loudly.  Blank lines and lines
starting with '#' are ignored.  The MORPHORISK_SEED environment
variable, when set, overrides the configured seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .volume import ALL_LEVELS

DEFAULT_OUTCOMES = (
    "mortality_1y", "any_complication", "serious_complication",
    "unplanned_readmission", "transfusion", "severe_infection",
    "pulmonary_complication",
)


@dataclass
class RunConfig:
    cohort_path: Path = Path("cohort.csv")
    masks_dir: Path = Path("masks")
    maps_dir: Path = Path("maps")
    output_dir: Path = Path("out")
    outcomes: tuple = DEFAULT_OUTCOMES
    corr_threshold: float = 0.8
    retain_p: float = 0.1
    eliminate_p: float = 0.1
    nsqip_threshold: float = 0.05
    horizon_days: float = 365.0
    bootstrap_b: int = 1000
    seed: int = 0
    min_screen_n: int = 50
    workers: int = 1
    level_overrides: dict = field(default_factory=dict)

    def validate(self):
        if not 0 < self.corr_threshold <= 1:
            raise ConfigInvalid("corr_threshold must be in (0, 1]")
        for key in ("retain_p", "eliminate_p", "nsqip_threshold"):
            v = getattr(self, key)
            if not 0 < v < 1:
                raise ConfigInvalid(f"{key} must be in (0, 1), got {v}")
        if self.horizon_days <= 0:
            raise ConfigInvalid("horizon_days must be positive")
        if self.bootstrap_b < 1:
            raise ConfigInvalid("bootstrap_b must be >= 1")
        if self.seed < 0:
            raise ConfigInvalid("seed must be a nonnegative integer")
        if self.workers < 1:
            raise ConfigInvalid("workers must be >= 1")
        if self.min_screen_n < 2:
            raise ConfigInvalid("min_screen_n must be >= 2")
        for metric, level in self.level_overrides.items():
            if level not in {lv.value for lv in ALL_LEVELS}:
                raise ConfigInvalid(
                    f"level_override.{metric}: unknown level {level!r}")


_PATH_KEYS = ("cohort_path", "masks_dir", "maps_dir", "output_dir")
_FLOAT_KEYS = ("corr_threshold", "retain_p", "eliminate_p",
               "nsqip_threshold", "horizon_days")
_INT_KEYS = ("bootstrap_b", "seed", "min_screen_n", "workers")


def parse_config(text, base_dir=".") -> RunConfig:
    cfg = RunConfig()
    base = Path(base_dir)
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key=value, "
                                f"got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _PATH_KEYS:
            setattr(cfg, key, base / value)
        elif key in _FLOAT_KEYS:
            try:
                setattr(cfg, key, float(value))
            except ValueError:
                raise ConfigInvalid(
                    f"line {lineno}: {key} needs a number") from None
        elif key in _INT_KEYS:
            try:
                setattr(cfg, key, int(value))
            except ValueError:
                raise ConfigInvalid(
                    f"line {lineno}: {key} needs an integer") from None
        elif key == "outcomes":
            cfg.outcomes = tuple(v.strip() for v in value.split(",")
                                 if v.strip())
        elif key.startswith("level_override."):
            overrides[key[len("level_override."):]] = value
        else:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
    cfg.level_overrides = overrides
    env_seed = os.environ.get("MORPHORISK_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigInvalid(
                f"MORPHORISK_SEED={env_seed!r} is not an integer") from None
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"),
                       base_dir=path.parent)
    if not cfg.cohort_path.exists():
        raise ConfigInvalid(f"cohort_path {cfg.cohort_path} does not exist")
    if not cfg.masks_dir.is_dir():
        raise ConfigInvalid(f"masks_dir {cfg.masks_dir} does not exist")
    if not cfg.maps_dir.is_dir():
        raise ConfigInvalid(f"maps_dir {cfg.maps_dir} does not exist")
    return cfg
