"""Run configuration: INI file loading, validation, and backend wiring.

The config file uses key = value pairs under section headers. Every
value has a default matching the pipeline's standard operating point
(link threshold 0.7, support/entailment threshold 0.5, 4 samples at
temperature 0.5 for data generation, single samples at 0.25 for
inference, 5 working passages, budget 4). Unknown sections or keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    HttpGenerator,
    HttpScorer,
    MockGenerator,
    OracleScorer,
    UsageMeter,
)


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or inconsistent configuration."""


@dataclass
class BackendSettings:
    generator: str = "http"          # "http" or "mock"
    generator_url: str = ""
    generator_script: str = ""       # mock: path to a JSON array of texts
    scorer: str = "http"             # "http" or "oracle"
    scorer_url: str = ""
    scorer_table: str = ""           # oracle: path to [{premise, hypothesis, score}]
    api_key_env: str = ""


@dataclass
class Thresholds:
    tau_link: float = 0.7
    tau_support: float = 0.5
    tau_entail: float = 0.5


@dataclass
class Sampling:
    datagen_temperature: float = 0.5
    n_samples: int = 4
    eval_temperature: float = 0.25
    top_p: float = 0.95
    max_tokens: int = 512


@dataclass
class TtaSettings:
    k: int = 5
    budget: int = 4


@dataclass
class PathSettings:
    corpus: str = ""
    index: str = ""


@dataclass
class RunConfig:
    backends: BackendSettings = field(default_factory=BackendSettings)
    thresholds: Thresholds = field(default_factory=Thresholds)
    sampling: Sampling = field(default_factory=Sampling)
    tta: TtaSettings = field(default_factory=TtaSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        t = self.thresholds
        if not 0.0 <= t.tau_support <= t.tau_entail <= t.tau_link <= 1.0:
            raise ConfigError(
                "thresholds must satisfy 0 <= tau_support <= tau_entail <= tau_link <= 1, "
                f"got support={t.tau_support}, entail={t.tau_entail}, link={t.tau_link}"
            )
        if self.sampling.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.tta.k < 1 or self.tta.budget < 1:
            raise ConfigError("tta k and budget must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "backends": {
                "generator": self.backends.generator,
                "generator_url": self.backends.generator_url,
                "generator_script": self.backends.generator_script,
                "scorer": self.backends.scorer,
                "scorer_url": self.backends.scorer_url,
                "scorer_table": self.backends.scorer_table,
                "api_key_env": self.backends.api_key_env,
            },
            "thresholds": {
                "tau_link": self.thresholds.tau_link,
                "tau_support": self.thresholds.tau_support,
                "tau_entail": self.thresholds.tau_entail,
            },
            "sampling": {
                "datagen_temperature": self.sampling.datagen_temperature,
                "n_samples": self.sampling.n_samples,
                "eval_temperature": self.sampling.eval_temperature,
                "top_p": self.sampling.top_p,
                "max_tokens": self.sampling.max_tokens,
            },
            "tta": {"k": self.tta.k, "budget": self.tta.budget},
            "paths": {"corpus": self.paths.corpus, "index": self.paths.index},
            "seed": self.seed,
            "jobs": self.jobs,
        }


_SCHEMA: dict[str, dict[str, type]] = {
    "backends": {
        "generator": str, "generator_url": str, "generator_script": str,
        "scorer": str, "scorer_url": str, "scorer_table": str, "api_key_env": str,
    },
    "thresholds": {"tau_link": float, "tau_support": float, "tau_entail": float},
    "sampling": {
        "datagen_temperature": float, "n_samples": int,
        "eval_temperature": float, "top_p": float, "max_tokens": int,
    },
    "tta": {"k": int, "budget": int},
    "paths": {"corpus": str, "index": str},
    "run": {"seed": int, "jobs": int},
}


def load_config(path: str | Path | None) -> RunConfig:
    """Load a config file, or return defaults when path is None."""
    config = RunConfig()
    if path is None:
        config.validate()
        return config
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    sections = {
        "backends": config.backends,
        "thresholds": config.thresholds,
        "sampling": config.sampling,
        "tta": config.tta,
        "paths": config.paths,
    }
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            kind = _SCHEMA[section][key]
            try:
                value = kind(raw) if kind is not str else raw
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
            if section == "run":
                setattr(config, key, value)
            else:
                setattr(sections[section], key, value)
    config.validate()
    return config


def resolve_api_key(config: RunConfig) -> str | None:
    env = config.backends.api_key_env
    if not env:
        return None
    return os.environ.get(env)


def build_generator(config: RunConfig, meter: UsageMeter | None = None):
    kind = config.backends.generator
    if kind == "mock":
        script_path = config.backends.generator_script
        if not script_path:
            raise ConfigError("mock generator requires backends.generator_script")
        try:
            script = json.loads(Path(script_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read generator script {script_path}: {exc}") from exc
        if not isinstance(script, list) or not all(isinstance(t, str) for t in script):
            raise ConfigError(f"generator script {script_path} must be a JSON array of strings")
        return MockGenerator(script, meter=meter)
    if kind == "http":
        if not config.backends.generator_url:
            raise ConfigError("http generator requires backends.generator_url")
        return HttpGenerator(config.backends.generator_url, api_key=resolve_api_key(config), meter=meter)
    raise ConfigError(f"unknown generator kind {kind!r} (expected http or mock)")


def build_scorer(config: RunConfig, meter: UsageMeter | None = None):
    kind = config.backends.scorer
    if kind == "oracle":
        overrides: dict[tuple[str, str], float] = {}
        table_path = config.backends.scorer_table
        if table_path:
            try:
                entries = json.loads(Path(table_path).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read scorer table {table_path}: {exc}") from exc
            for entry in entries:
                overrides[(entry["premise"], entry["hypothesis"])] = float(entry["score"])
        return OracleScorer(overrides=overrides, meter=meter)
    if kind == "http":
        if not config.backends.scorer_url:
            raise ConfigError("http scorer requires backends.scorer_url")
        return HttpScorer(config.backends.scorer_url, api_key=resolve_api_key(config), meter=meter)
    raise ConfigError(f"unknown scorer kind {kind!r} (expected http or oracle)")
