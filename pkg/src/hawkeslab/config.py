"""Experiment configuration and run manifests.

Configs are plain JSON documents; distributions appear as tagged records
(``{"kind": "exponential", "rate": 1.0}``).  The canonical serialization
(sorted keys, fixed separators) feeds the config hash, so a manifest
pins exactly what was run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

from . import __version__

EXPERIMENTS = (
    "renewal-check",
    "hawkes-mean",
    "intensity-converge",
    "fluctuations",
    "bidask-price",
    "limit-sde",
    "heston-correlation",
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    paths: int = 1000
    T_list: tuple = (1.0,)
    dt: float = 1e-3
    workers: int = 1
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if not self.T_list or list(self.T_list) != sorted(self.T_list):
            raise ValueError("T_list must be nonempty and increasing")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "paths": self.paths,
            "T_list": list(self.T_list),
            "dt": self.dt,
            "workers": self.workers,
            "params": self.params,
            "tolerances": self.tolerances,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        spec = dict(spec)
        spec["T_list"] = tuple(spec.get("T_list", (1.0,)))
        return cls(**spec)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class Verdict:
    """One acceptance check: a measured value against its tolerance."""

    name: str
    value: float
    target: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.name}: value={self.value:.6g} "
                f"target={self.target:.6g} tol={self.tolerance:.6g}")


@dataclass
class ExperimentReport:
    """Everything one experiment produced: verdicts plus artifact bodies."""

    experiment: str
    config: ExperimentConfig
    verdicts: list
    artifacts: dict

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def summary_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_hash": self.config.config_hash(),
            "passed": self.passed,
            "verdicts": [
                {
                    "name": v.name, "value": v.value, "target": v.target,
                    "tolerance": v.tolerance, "passed": v.passed,
                }
                for v in self.verdicts
            ],
        }


def build_manifest(report: ExperimentReport, filenames: dict) -> dict:
    """Run manifest: config hash, code version, artifact digests.

    The ``created_at`` stamp is informational; every field that influences
    results is derived from the config alone.
    """
    return {
        "experiment": report.experiment,
        "config": report.config.to_dict(),
        "config_hash": report.config.config_hash(),
        "version": __version__,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "seed_derivation": "SeedSequence(entropy=seed, spawn_key=(path_index, stream_index))",
        "artifacts": {
            name: hashlib.sha256(body.encode()).hexdigest()
            for name, body in filenames.items()
        },
    }
