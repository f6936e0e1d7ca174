"""Run configuration: one TOML file per run, copied into the run directory.

API keys never appear here; the remote backend only names the environment
variable that holds the key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from ..agent import VARIANTS
from ..embedding import EmbeddingConfig
from ..ppo import PpoConfig
from ..sac import SacConfig

ENV_IDS = ("uganda", "mimic", "vitals", "heat", "toy")
AGENTS = VARIANTS + ("ppo",)
SECRET_WORDS = ("api_key", "apikey", "secret", "password", "token")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "toy"
    variant: str = "rbrl"
    backend: str = "scripted"
    seeds: list = field(default_factory=lambda: [0])
    total_timesteps: int = 2000
    output_dir: str = "runs/default"
    num_envs: int = 4
    num_rules: int = 5
    rule_reward_coef: float = 1.0
    gamma: float = 0.95
    explain: bool = True
    concurrent: bool = True
    checkpoint_every: int = 0
    env_options: dict = field(default_factory=dict)
    scripted: dict = field(default_factory=dict)
    remote: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=dict)
    sac: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.env not in ENV_IDS:
            raise ConfigError(f"env must be one of {ENV_IDS}, got {self.env!r}")
        if self.variant not in AGENTS:
            raise ConfigError(f"variant must be one of {AGENTS}, got {self.variant!r}")
        if self.backend not in ("scripted", "remote"):
            raise ConfigError(f"backend must be scripted or remote, got {self.backend!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.total_timesteps < 1 or self.num_envs < 1 or self.num_rules < 1:
            raise ConfigError("total_timesteps, num_envs and num_rules must be positive")
        if self.backend == "remote" and not self.remote.get("model"):
            raise ConfigError("remote backend needs [remote] model")
        _reject_secrets(dataclasses.asdict(self))
        # section contents must be accepted by their config classes
        try:
            self.sac_config()
            self.ppo_config(self.seeds[0])
            self.embedding_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def sac_config(self) -> SacConfig:
        return SacConfig(**{"gamma": self.gamma, **self.sac})

    def ppo_config(self, seed: int) -> PpoConfig:
        return PpoConfig(**{"gamma": self.gamma, "num_envs": self.num_envs,
                            "total_timesteps": self.total_timesteps, **self.ppo, "seed": seed})

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(**self.embedding)

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(tomli_w.dumps(self.to_dict()))
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = tomli.loads(Path(path).read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def _reject_secrets(obj, where: str = "") -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            if any(w in str(k).lower() for w in SECRET_WORDS) and not str(k).endswith("_env"):
                raise ConfigError(f"config key {where}{k} looks like a credential; "
                                  "pass keys through environment variables instead")
            _reject_secrets(v, f"{where}{k}.")
