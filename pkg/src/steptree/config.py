"""Engine configuration: one flat key set shared by flags and config file.

Precedence: command-line flags > config file > environment > defaults.
Environment variables are used only for secrets: ``RPM_API_KEY`` (provider
key) and ``RPM_API_BASE`` (provider base URL).
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .embedding import RemoteEmbedder, TrigramEmbedder
from .errors import ConfigError
from .gateway import HttpChatBackend, LlmGateway, SamplingConfig, ScriptedMockBackend
from .kb import KnowledgeBase
from .kb import load_kb as _load_kb_file
from .sandbox import Sandbox, SandboxLimits
from .search import SearchConfig, SearchDeps

API_KEY_ENV = "RPM_API_KEY"
API_BASE_ENV = "RPM_API_BASE"


@dataclass
class EngineConfig:
    # search hyperparameters
    rollout_max: int = 5
    branching_b: int = 3
    ucb_beta: float = 0.5
    kb_alpha: float = 0.5
    sim_threshold: float = 0.85
    eval_gamma: float = 0.7
    llm_success_threshold: float = 0.9
    seed: int = 0
    simulate_all_children: bool = False
    # ablation switches
    no_kb: bool = False
    no_sim_filter: bool = False
    no_exec_reward: bool = False
    no_localize: bool = False
    # model backend
    model_name: str = "default-model"
    temperature: float = 0.7
    top_p: float = 0.95
    llm_seed: int | None = None
    api_base: str | None = None
    mock_script: str | None = None
    # embedder
    embedder_kind: str = "trigram"  # trigram | remote
    embedder_dim: int = 64
    embedder_endpoint: str | None = None
    # sandbox
    per_test_timeout_ms: int = 5000
    total_timeout_ms: int = 20000
    memory_mb: int = 256
    harness_path: str | None = None
    # paths and bench
    kb: str | None = None
    workers: int = 1
    problem_budget_s: float = 600.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def load(cls, config_file: str | Path | None = None, overrides: dict[str, Any] | None = None) -> "EngineConfig":
        values: dict[str, Any] = {}
        if config_file is not None:
            values.update(_read_config_file(Path(config_file)))
        if os.environ.get(API_BASE_ENV) and "api_base" not in values:
            values["api_base"] = os.environ[API_BASE_ENV]
        for key, value in (overrides or {}).items():
            if value is not None:
                if key not in cls.field_names():
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = value
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> "EngineConfig":
        if self.embedder_kind not in ("trigram", "remote"):
            raise ConfigError(f"embedder_kind must be trigram or remote, got {self.embedder_kind!r}")
        if self.embedder_kind == "remote" and not self.embedder_endpoint:
            raise ConfigError("embedder_kind=remote requires embedder_endpoint")
        if self.embedder_dim <= 0:
            raise ConfigError("embedder_dim must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.search_config()  # validates ranges
        return self

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            rollout_max=self.rollout_max,
            branching_b=self.branching_b,
            ucb_beta=self.ucb_beta,
            kb_alpha=0.0 if self.no_kb else self.kb_alpha,
            sim_threshold=self.sim_threshold,
            eval_gamma=0.0 if self.no_exec_reward else self.eval_gamma,
            llm_success_threshold=self.llm_success_threshold,
            rng_seed=self.seed,
            sim_filter_enabled=not self.no_sim_filter,
            localize_enabled=not self.no_localize,
            simulate_all_children=self.simulate_all_children,
        ).validate()

    def make_embedder(self):
        if self.embedder_kind == "trigram":
            return TrigramEmbedder(dim=self.embedder_dim)
        return RemoteEmbedder(
            endpoint=self.embedder_endpoint,
            dim=self.embedder_dim,
            auth_token=os.environ.get(API_KEY_ENV),
        )

    def make_backend(self):
        if self.mock_script:
            return ScriptedMockBackend(self.mock_script)
        base_url = self.api_base or os.environ.get(API_BASE_ENV)
        if not base_url:
            raise ConfigError(f"no model backend: set mock_script, api_base, or {API_BASE_ENV}")
        return HttpChatBackend(
            base_url=base_url,
            model_name=self.model_name,
            api_key=os.environ.get(API_KEY_ENV),
            sampling=SamplingConfig(temperature=self.temperature, top_p=self.top_p, seed=self.llm_seed),
        )

    def make_sandbox(self) -> Sandbox:
        limits = SandboxLimits(
            per_test_timeout_ms=self.per_test_timeout_ms,
            total_timeout_ms=self.total_timeout_ms,
            memory_mb=self.memory_mb,
        )
        harness = Path(self.harness_path) if self.harness_path else None
        return Sandbox(limits=limits, harness_path=harness)

    def load_kb(self) -> KnowledgeBase | None:
        if not self.kb:
            return None
        return _load_kb_file(self.kb)

    def make_deps(self) -> SearchDeps:
        return SearchDeps(
            gateway=LlmGateway(self.make_backend()),
            sandbox=self.make_sandbox(),
            embedder=self.make_embedder(),
            kb=self.load_kb(),
        )


def _read_config_file(path: Path) -> dict[str, Any]:
    if sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    try:
        raw = toml.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except toml.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from exc
    known = set(EngineConfig.field_names())
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    return raw
