"""Experiment configuration: dataclasses plus TOML loading."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGOS = ("fsclb", "fedlinucb", "random")


@dataclass
class EnvSpec:
    kind: str = "synthetic"
    arm_rank: int | None = None
    path: str | None = None


@dataclass
class ScheduleSpec:
    mode: str = "uniform"
    block: int = 1


@dataclass
class ExperimentConfig:
    algo: str = "fsclb"
    d: int = 50
    l: int = 20
    M: int = 10
    K: int = 10
    T: int = 20000
    trials: int = 1
    alpha: float = 1.0
    lam: float = 1.0
    R: float = 0.1
    S_norm: float = 1.0
    L: float = 1.0
    delta_conf: float = 0.01
    env: EnvSpec = field(default_factory=EnvSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    transport: str = "inproc"
    host: str = "127.0.0.1"
    port: int = 0
    theory: bool = False
    seed: int = 0
    record_timings: bool = True
    det_path: str = "auto"
    shrink: str = "l"

    def __post_init__(self):
        if isinstance(self.env, dict):
            self.env = _build(EnvSpec, self.env, "env")
        if isinstance(self.schedule, dict):
            self.schedule = _build(ScheduleSpec, self.schedule, "schedule")
        self.validate()

    def validate(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.T < 1 or self.trials < 1 or self.M < 1 or self.K < 1 or self.d < 1:
            raise ConfigError("d, M, K, T and trials must be positive")
        if self.algo == "fsclb" and not 1 <= self.l < self.d and self.env.kind == "synthetic":
            raise ConfigError(f"fsclb needs 1 <= l < d, got l={self.l}, d={self.d}")
        if self.alpha <= 0 or self.lam <= 0:
            raise ConfigError("alpha and lambda must be positive")
        if not 0 < self.delta_conf < 1:
            raise ConfigError("delta_conf must lie in (0, 1)")
        if self.transport not in ("inproc", "tcp"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.env.kind not in ("synthetic", "dataset"):
            raise ConfigError(f"unknown env kind {self.env.kind!r}")
        if self.env.kind == "dataset" and not self.env.path:
            raise ConfigError("dataset env needs a path")
        if self.schedule.mode not in ("uniform", "round-robin", "block"):
            raise ConfigError(f"unknown schedule mode {self.schedule.mode!r}")
        if self.det_path not in ("auto", "svd", "dense"):
            raise ConfigError(f"unknown det_path {self.det_path!r}")
        if self.shrink not in ("l", "l+1"):
            raise ConfigError(f"shrink must be 'l' or 'l+1', got {self.shrink!r}")

    @property
    def shrink_index(self) -> int:
        return self.l if self.shrink == "l" else self.l + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ExperimentConfig":
        env = changes.pop("env", None)
        schedule = changes.pop("schedule", None)
        cfg = replace(self, **changes)
        if env is not None:
            cfg.env = replace(self.env, **env) if isinstance(env, dict) else env
        if schedule is not None:
            cfg.schedule = (replace(self.schedule, **schedule)
                            if isinstance(schedule, dict) else schedule)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config")


def _build(cls, data, where):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    data.pop("sweep", None)
    return ExperimentConfig.from_dict(data)


def load_sweep_grid(path) -> dict:
    with open(path, "rb") as fh:
        return dict(tomllib.load(fh).get("sweep", {}))
