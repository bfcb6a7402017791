"""Run configuration files (JSON) with strict key checking and round-trip serialization."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import RewardSpec, Task
from .errors import ConfigError, DomainError
from .objectives import ClipConfig
from .policy import Vocab
from .trainer import TrainConfig


@dataclass
class RewardSection:
    kind: str = "target-sequence"
    bound: float = 1.0
    target: list[int] | None = field(default_factory=lambda: [1, 2, 0])
    pattern: list[int] | None = None
    cap: int = 2
    seed: int = 0


@dataclass
class TaskSection:
    vocab_size: int = 3
    eos: int = 0
    horizon: int = 3
    prompt_id: int = 0
    enumeration_budget: int = 100_000
    reward: RewardSection = field(default_factory=RewardSection)


@dataclass
class ClipSection:
    mode: str | None = None
    eps_low: float = 0.2
    eps_high: float = 0.28


@dataclass
class TrainSection:
    algorithm: str = "tic-grpo"
    eta: float = 0.05
    K: int = 4
    N: int = 300
    group_size: int = 8
    minibatch_groups: int = 1
    batch_groups: int | None = None
    beta: float = 0.0
    delta: float = 1e-4
    length_norm: str = "mean"
    kl_estimator: str = "exact"
    reuse: str = "partition"
    log_exact: bool = True
    init: str = "zeros"
    init_scale: float = 1.0
    clip: ClipSection = field(default_factory=ClipSection)


@dataclass
class OracleSection:
    stats_samples: int = 200_000


@dataclass
class BiasStudySection:
    samples: int = 100_000
    group_size: int = 8
    pairs: int = 5
    drift: float = 0.3
    init_scale: float = 1.0
    delta: float = 1e-4
    estimators: list[str] = field(default_factory=lambda: ["grpo", "tic-grpo", "ablation"])
    z_tol: float = 3.0
    separation_min: float = 10.0
    max_attempts: int = 50


@dataclass
class DecomposeSection:
    groups: int = 64


@dataclass
class SweepSection:
    eta: list[float] = field(default_factory=lambda: [0.01, 0.05])
    K: list[int] = field(default_factory=lambda: [1, 4])
    group_size: list[int] = field(default_factory=lambda: [4, 16])
    seeds: int = 20
    algorithms: list[str] = field(default_factory=lambda: ["grpo", "tic-grpo"])
    N: int | None = None
    burn_in: float = 0.5
    noise_sigma: float = 3.0


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    output_dir: str | None = None
    task: TaskSection = field(default_factory=TaskSection)
    train: TrainSection = field(default_factory=TrainSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    bias_study: BiasStudySection = field(default_factory=BiasStudySection)
    decompose: DecomposeSection = field(default_factory=DecomposeSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def build_task(self) -> Task:
        t, r = self.task, self.task.reward
        try:
            spec = RewardSpec(
                kind=r.kind,
                bound=r.bound,
                target=tuple(r.target) if r.target is not None else None,
                pattern=tuple(r.pattern) if r.pattern is not None else None,
                cap=r.cap,
                seed=r.seed,
            )
            return Task(Vocab(t.vocab_size, t.eos), t.horizon, spec, t.prompt_id, t.enumeration_budget)
        except DomainError as exc:
            raise ConfigError(str(exc), "task") from exc

    def train_config(self, **overrides) -> TrainConfig:
        tr = self.train
        clip = None
        if tr.clip.mode is not None:
            try:
                clip = ClipConfig(tr.clip.eps_low, tr.clip.eps_high, tr.clip.mode)
            except DomainError as exc:
                raise ConfigError(str(exc), "train.clip") from exc
        kw = dict(
            algorithm=tr.algorithm,
            eta=tr.eta,
            K=tr.K,
            N=tr.N,
            group_size=tr.group_size,
            minibatch_groups=tr.minibatch_groups,
            batch_groups=tr.batch_groups,
            beta=tr.beta,
            clip=clip,
            delta=tr.delta,
            length_norm=tr.length_norm,
            kl_estimator=tr.kl_estimator,
            reuse=tr.reuse,
            seed=self.seed,
            log_exact=tr.log_exact,
        )
        kw.update(overrides)
        try:
            return TrainConfig(**kw)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"train.{exc.field}") from exc

    def validate(self):
        self.build_task()
        self.train_config()
        if self.train.init not in ("zeros", "random"):
            raise ConfigError("must be 'zeros' or 'random'", "train.init")
        if self.oracle.stats_samples < 1000:
            raise ConfigError("must be >= 1000", "oracle.stats_samples")
        sw = self.sweep
        for name in ("eta", "K", "group_size", "algorithms"):
            if not getattr(sw, name):
                raise ConfigError("grid axis is empty", f"sweep.{name}")
        if sw.seeds < 1:
            raise ConfigError("must be >= 1", "sweep.seeds")
        if not 0 <= sw.burn_in < 1:
            raise ConfigError("must lie in [0, 1)", "sweep.burn_in")
        bs = self.bias_study
        if not bs.estimators:
            raise ConfigError("needs at least one estimator", "bias_study.estimators")
        for e in bs.estimators:
            if e not in ("grpo", "tic-grpo", "ablation"):
                raise ConfigError(f"unknown estimator {e!r}", "bias_study.estimators")
        if bs.pairs < 1:
            raise ConfigError("must be >= 1", "bias_study.pairs")
        return self


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path or None)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    for key, value in data.items():
        default = names[key].default_factory() if names[key].default_factory is not dataclasses.MISSING else None
        sub = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, sub)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def parse_config(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return parse_config(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
