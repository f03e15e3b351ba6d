"""Experiment configuration: a JSON document whose keys mirror the CLI flags.

Example::

    {
      "n_steps": 50, "decay": 0.975, "freeze_step": 51, "noise_seed": 0,
      "ks": [5, 10, 15, 20, 25], "alpha": 0.9,
      "capacity_items": 5000, "policy": "lcbfu",
      "match_predictor": true, "mp_centroids": 64, "mp_threshold_quantile": 0.99,
      "selector_offset": 0, "simk_path": null,
      "latency": {"compute": 8.59, "search": 0.1, "retrieve": 0.05},
      "prices": {"gpu_per_hour": 8.144, "index_per_hour": 0.12, "store_per_hour": 0.09},
      "trace": null,
      "synth": {"n_clusters": 200, "total_prompts": 10000, "seed": 0},
      "preload": 1000, "seed": 0,
      "report_path": null, "outcomes_path": null
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backend import BackendConfig
from .domain import DEFAULT_KS
from .pipeline import LatencyParams, PipelineConfig, Prices
from .policy import PolicyKind
from .workload import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n_steps: int = 50
    decay: float = 0.975
    freeze_step: int = 51
    noise_seed: int = 0
    ks: tuple[int, ...] = DEFAULT_KS
    alpha: float = 0.9
    capacity_items: int = 5_000
    policy: str = "lcbfu"
    match_predictor: bool = True
    mp_centroids: int = 64
    mp_threshold_quantile: float = 0.99
    selector_offset: int = 0
    simk_path: Optional[str] = None
    latency: LatencyParams = field(default_factory=LatencyParams)
    prices: Prices = field(default_factory=Prices)
    trace: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    preload: int = 1_000
    seed: int = 0
    report_path: Optional[str] = None
    outcomes_path: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        ks = list(self.ks)
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError(f"ks must be strictly increasing, got {ks}")
        if ks[0] <= 0 or ks[-1] >= self.n_steps:
            raise ConfigError(f"ks must lie strictly between 0 and n_steps={self.n_steps}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.capacity_items < len(ks):
            raise ConfigError("capacity must hold at least one prompt's states")
        try:
            PolicyKind(self.policy)
        except ValueError:
            raise ConfigError(f"unknown policy {self.policy!r}") from None
        if self.preload < 0:
            raise ConfigError("preload must be non-negative")
        for name in ("simk_path", "trace"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name}: no such file {path}")
        try:
            self.backend_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def backend_config(self) -> BackendConfig:
        return BackendConfig(self.n_steps, self.decay, self.freeze_step, self.noise_seed)

    def pipeline_config(self, **overrides) -> PipelineConfig:
        cfg = PipelineConfig(
            ks=tuple(self.ks),
            alpha=self.alpha,
            capacity_items=self.capacity_items,
            policy=PolicyKind(self.policy),
            use_predictor=self.match_predictor,
            mp_centroids=self.mp_centroids,
            mp_threshold_quantile=self.mp_threshold_quantile,
            selector_offset=self.selector_offset,
            dim=self.synth.dim,
            latency=self.latency,
            backend=self.backend_config(),
            seed=self.seed,
        )
        return dataclasses.replace(cfg, **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ks"] = list(self.ks)
        d["synth"]["cluster_sigmas"] = list(self.synth.cluster_sigmas)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        doc = dict(doc)
        try:
            if "ks" in doc:
                doc["ks"] = tuple(int(k) for k in doc["ks"])
            if "latency" in doc:
                doc["latency"] = LatencyParams(**doc["latency"])
            if "prices" in doc:
                doc["prices"] = Prices(**doc["prices"])
            if "synth" in doc:
                synth = dict(doc["synth"])
                if "cluster_sigmas" in synth:
                    synth["cluster_sigmas"] = tuple(synth["cluster_sigmas"])
                doc["synth"] = SynthConfig(**synth)
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)
