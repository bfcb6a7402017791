"""Outer/inner stochastic-gradient-ascent loop shared by GRPO, TIC-GRPO and the ablation.

Each outer step freezes the old policy, samples a batch of groups under it and
computes their advantages once; the inner loop then takes ``K`` ascent steps,
each on one mini-batch of that batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .env import Task
from .errors import ConfigError, NumericAbort
from .groups import DEFAULT_DELTA, Group, sample_group
from .objectives import ClipConfig, EstimatorSpec, estimate_gradient
from .oracle import task_gradients
from .policy import PolicyParams, ReferencePolicy

SCHEMA_VERSION = 1
ALGORITHMS = ("grpo", "tic-grpo", "ablation")
REUSE_MODES = ("partition", "replacement")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "tic-grpo"
    eta: float = 0.05
    K: int = 4
    N: int = 300
    group_size: int = 8
    minibatch_groups: int = 1
    batch_groups: int | None = None
    beta: float = 0.0
    clip: ClipConfig | None = None
    delta: float = DEFAULT_DELTA
    length_norm: str = "mean"
    kl_estimator: str = "exact"
    reuse: str = "partition"
    seed: int = 0
    log_exact: bool = True

    def __post_init__(self):
        if self.batch_groups is None:
            object.__setattr__(self, "batch_groups", self.minibatch_groups * self.K)
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {ALGORITHMS}, got {self.algorithm!r}", "algorithm")
        if not (isinstance(self.K, int) and self.K >= 1):
            raise ConfigError(f"must be an integer >= 1, got {self.K!r}", "K")
        if not (isinstance(self.N, int) and self.N >= 1):
            raise ConfigError(f"must be an integer >= 1, got {self.N!r}", "N")
        if not self.eta >= 0:
            raise ConfigError(f"must be >= 0, got {self.eta!r}", "eta")
        if not (isinstance(self.group_size, int) and self.group_size >= 2):
            raise ConfigError(f"must be an integer >= 2, got {self.group_size!r}", "group_size")
        if self.minibatch_groups < 1:
            raise ConfigError("must be >= 1", "minibatch_groups")
        if self.reuse not in REUSE_MODES:
            raise ConfigError(f"must be one of {REUSE_MODES}", "reuse")
        if self.reuse == "partition" and self.batch_groups != self.minibatch_groups * self.K:
            raise ConfigError("partition reuse needs batch_groups == minibatch_groups * K", "batch_groups")
        if self.batch_groups < 1:
            raise ConfigError("must be >= 1", "batch_groups")
        if self.beta < 0:
            raise ConfigError("must be >= 0", "beta")
        if self.delta < 0:
            raise ConfigError("must be >= 0", "delta")
        if self.length_norm not in ("mean", "dapo"):
            raise ConfigError("must be 'mean' or 'dapo'", "length_norm")
        if self.kl_estimator not in ("exact", "k3"):
            raise ConfigError("must be 'exact' or 'k3'", "kl_estimator")

    def estimator_spec(self) -> EstimatorSpec:
        kw = dict(length_norm=self.length_norm, beta=self.beta, kl_estimator=self.kl_estimator)
        if self.algorithm == "grpo":
            clip = self.clip or ClipConfig(mode="two-sided-min")
            return EstimatorSpec("token", clip, **kw)
        if self.algorithm == "tic-grpo":
            clip = self.clip or ClipConfig(mode="upper-only")
            return EstimatorSpec("trajectory", clip, **kw)
        return EstimatorSpec("none", ClipConfig.disabled(), **kw)


@dataclass(frozen=True, eq=False)
class TrainState:
    theta: PolicyParams
    theta_old: PolicyParams
    groups: tuple[Group, ...] = ()


def refresh_old(state: TrainState) -> TrainState:
    """Freeze the current parameters as the old policy and drop stale groups."""
    return TrainState(state.theta, state.theta, ())


@dataclass(eq=False)
class RunLog:
    """Append-only training records.

    ``outer`` holds one record per outer step, taken at the refreshed
    parameters; ``inner`` one record per update. Wall-clock timings are kept
    apart in ``timings`` so metric records replay bitwise.
    """

    config: TrainConfig
    outer: list[dict] = field(default_factory=list)
    inner: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)
    aborted: bool = False
    final_params: PolicyParams | None = None

    def records(self) -> list[dict]:
        """Outer and inner records interleaved in execution order."""
        out, by_n = [], {}
        for rec in self.inner:
            by_n.setdefault(rec["n"], []).append(rec)
        for rec in self.outer:
            out.append(rec)
            out.extend(by_n.pop(rec["n"], []))
        for recs in by_n.values():
            out.extend(recs)
        return out

    @property
    def exact_J(self) -> np.ndarray:
        return np.array([r["J"] for r in self.inner if r.get("J") is not None])

    @property
    def final_J(self) -> float | None:
        for rec in reversed(self.inner):
            if rec.get("J") is not None:
                return rec["J"]
        return self.outer[-1]["J"] if self.outer else None

    def grad_norm_sq(self) -> np.ndarray:
        return np.array([r["grad_norm_sq"] for r in self.outer])

    def stationarity(self, burn_in: float = 0.5) -> float:
        """Mean of ||grad J(theta_{n,0})||^2 over outer steps after the burn-in fraction."""
        g = self.grad_norm_sq()
        start = min(int(np.floor(burn_in * len(g))), len(g) - 1)
        return float(g[start:].mean())


def _minibatches(cfg: TrainConfig, rng: np.random.Generator):
    m = cfg.minibatch_groups
    if cfg.reuse == "partition":
        return [np.arange(k * m, (k + 1) * m) for k in range(cfg.K)]
    return [rng.choice(cfg.batch_groups, size=m, replace=True) for _ in range(cfg.K)]


def run(
    cfg: TrainConfig,
    task: Task,
    policy_init: PolicyParams | None = None,
    ref: ReferencePolicy | None = None,
) -> RunLog:
    """Train with the configured algorithm; raise :class:`NumericAbort` on non-finite parameters."""
    rng = np.random.default_rng(cfg.seed)
    theta = PolicyParams.zeros(task.space) if policy_init is None else policy_init
    ref = ReferencePolicy(theta) if ref is None else ref
    spec = cfg.estimator_spec()
    log = RunLog(cfg)
    state = TrainState(theta, theta)
    t0 = time.perf_counter()

    def exact(params):
        if not cfg.log_exact:
            return None
        return task_gradients(params, task, cfg.beta, ref if cfg.beta > 0 else None)

    for n in range(1, cfg.N + 1):
        state = refresh_old(state)
        ex = exact(state.theta)
        log.outer.append(
            {
                "schema_version": SCHEMA_VERSION,
                "kind": "outer",
                "n": n,
                "J": ex.J if ex else None,
                "objective": ex.J_kl if ex else None,
                "grad_norm_sq": float(ex.grad_J_kl @ ex.grad_J_kl) if ex else None,
            }
        )
        groups = tuple(
            sample_group(state.theta_old, task.prompt, cfg.group_size, task.reward_spec, rng, cfg.delta)
            for _ in range(cfg.batch_groups)
        )
        state = replace(state, groups=groups)
        for k, mb in enumerate(_minibatches(cfg, rng), start=1):
            with np.errstate(over="ignore", invalid="ignore"):
                ests = [estimate_gradient(state.theta, state.theta_old, groups[i], spec, ref) for i in mb]
                grad = np.mean([e.vector for e in ests], axis=0)
                new_flat = state.theta.flat + cfg.eta * grad
            if not np.all(np.isfinite(new_flat)):
                log.inner.append(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "kind": "abort",
                        "n": n,
                        "k": k,
                        "J": None,
                        "grad_norm": None,
                        "clip_fraction": None,
                        "mean_ratio": None,
                        "max_ratio": None,
                    }
                )
                log.aborted = True
                log.final_params = state.theta
                raise NumericAbort(f"non-finite parameters at outer step {n}, inner step {k}", log)
            state = replace(state, theta=state.theta.with_flat(new_flat))
            ex_in = exact(state.theta)
            log.inner.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "kind": "inner",
                    "n": n,
                    "k": k,
                    "J": ex_in.J if ex_in else float(np.mean([g.mu for g in groups])),
                    "grad_norm": float(np.linalg.norm(grad)),
                    "clip_fraction": float(np.mean([e.clip_fraction for e in ests])),
                    "mean_ratio": float(np.mean([e.mean_ratio for e in ests])),
                    "max_ratio": float(np.max([e.max_ratio for e in ests])),
                }
            )
            log.timings.append({"n": n, "k": k, "wall_time": time.perf_counter() - t0})
    log.final_params = state.theta
    return log
