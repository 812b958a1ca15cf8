"""Run configuration: one JSON document, overridable per-flag, echoed into
every report so results are traceable to the exact resolved settings."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dialogue import PolicyParams
from .encoding import DEFAULT_DIMENSION, EncoderConfig
from .errors import ConfigError


@dataclass
class RunConfig:
    corpus: str = "artifacts/tickets.jsonl"
    kb: str = "artifacts/kb.jsonl"
    scenarios: str = "artifacts/scenarios.jsonl"
    index: str | None = None
    clusters: str | None = None
    out_dir: str = "out"

    encoder_provider: str = "hashing"
    encoder_dimension: int = DEFAULT_DIMENSION
    encoder_path: str | None = None
    encoder_endpoint: str | None = None
    encoder_model: str | None = None

    k_retrieve: int = 50
    k_clusters: int | None = None
    cluster_method: str = "minibatch-kmeans"
    tau_resolve: float = 0.6
    tau_probe: float = 0.35
    r_max: int = 3
    max_clusters_surfaced: int = 5
    history_window: int = 6
    prompt_budget: int = 2000

    variant: str = "dqa"
    seed: int = 1
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    runs: int = 3
    jobs: int = 1

    generation_endpoint: str | None = None
    judge_endpoint: str | None = None
    user_endpoint: str | None = None
    backend_token: str | None = None

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            provider=self.encoder_provider,
            dimension=self.encoder_dimension,
            seed=self.seed,
            path=self.encoder_path,
            endpoint=self.encoder_endpoint,
            model=self.encoder_model,
            auth_token=self.backend_token,
        )

    def policy_params(self) -> PolicyParams:
        return PolicyParams(
            tau_resolve=self.tau_resolve,
            tau_probe=self.tau_probe,
            k_retrieve=self.k_retrieve,
            r_max=self.r_max,
            max_clusters_surfaced=self.max_clusters_surfaced,
            history_window=self.history_window,
            prompt_budget=self.prompt_budget,
        )

    def to_dict(self) -> dict:
        return asdict(self)


_ENV_OVERRIDES = {
    "DQA_GENERATION_ENDPOINT": "generation_endpoint",
    "DQA_JUDGE_ENDPOINT": "judge_endpoint",
    "DQA_USER_ENDPOINT": "user_endpoint",
    "DQA_ENCODER_ENDPOINT": "encoder_endpoint",
    "DQA_BACKEND_TOKEN": "backend_token",
}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Config file < environment < explicit flag overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc.msg} at line {exc.lineno}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path}: expected a JSON object")
    for env, key in _ENV_OVERRIDES.items():
        if os.environ.get(env):
            data[key] = os.environ[env]
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**data)
    if cfg.seeds and cfg.runs != len(cfg.seeds):
        cfg.runs = len(cfg.seeds)
    return cfg
