"""Run configuration: documented keys, INI file loading, and content hashing.

Precedence: built-in defaults < config file < CLI flags. The config hash
covers every field that influences artifacts, so a changed field changes the
hash and invalidates stage skip decisions.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

# [run] section keys and their defaults; targets live in [targets].
DEFAULTS = {
    "seed": 0,
    "sample_rate": 16000,
    "replication": 2,
    "subjects": 33,
    "folds": 33,
    "pretrain_trials": 1000,
    "epochs_pretrain": 30,
    "epochs_fusion": 20,
    "feature_dim": 64,
    "out": "runs/default",
}

DEFAULT_CATEGORY_TARGETS = {
    "congruent": 0.07,
    "central": 0.64,
    "lateral": 0.59,
    "one_gap": 0.59,
    "two_gap": 0.56,
}
DEFAULT_STRATEGY_TARGETS = {"auditory": 0.20, "visual": 0.54, "mixed": 0.43}


@dataclass(frozen=True)
class RunConfig:
    seed: int = DEFAULTS["seed"]
    sample_rate: int = DEFAULTS["sample_rate"]
    replication: int = DEFAULTS["replication"]
    subjects: int = DEFAULTS["subjects"]
    folds: int = DEFAULTS["folds"]
    pretrain_trials: int = DEFAULTS["pretrain_trials"]
    epochs_pretrain: int = DEFAULTS["epochs_pretrain"]
    epochs_fusion: int = DEFAULTS["epochs_fusion"]
    feature_dim: int = DEFAULTS["feature_dim"]
    out: str = DEFAULTS["out"]
    category_targets: dict = field(default_factory=lambda: dict(DEFAULT_CATEGORY_TARGETS))
    strategy_targets: dict = field(default_factory=lambda: dict(DEFAULT_STRATEGY_TARGETS))

    def __post_init__(self):
        for name in ("sample_rate", "subjects", "folds", "pretrain_trials",
                     "epochs_pretrain", "epochs_fusion", "feature_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.replication not in (1, 2):
            raise ValueError("replication must be 1 or 2")
        if self.folds > self.subjects:
            raise ValueError("fold cap exceeds subject count")

    def digest(self) -> str:
        payload = asdict(self)
        payload.pop("out")  # output location does not affect content
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | None = None, **overrides) -> RunConfig:
    """Config from an INI file plus keyword overrides (CLI flags)."""
    values: dict = {}
    cat_targets = dict(DEFAULT_CATEGORY_TARGETS)
    strat_targets = dict(DEFAULT_STRATEGY_TARGETS)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        if parser.has_section("run"):
            for key in parser.options("run"):
                if key not in DEFAULTS:
                    raise ValueError(f"unknown config key: [run] {key}")
                raw = parser.get("run", key)
                values[key] = raw if key == "out" else int(raw)
        if parser.has_section("targets"):
            for key in parser.options("targets"):
                if key in cat_targets:
                    cat_targets[key] = parser.getfloat("targets", key)
                elif key in strat_targets:
                    strat_targets[key] = parser.getfloat("targets", key)
                else:
                    raise ValueError(f"unknown config key: [targets] {key}")
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return RunConfig(category_targets=cat_targets,
                     strategy_targets=strat_targets, **values)


def with_out(config: RunConfig, out: str | None) -> RunConfig:
    return replace(config, out=out) if out else config
