"""Group sampling and group-normalized advantages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import RewardSpec, TrajectorySpace, enumerate_trajectories, reward
from .errors import ConfigError, DomainError
from .policy import PolicyParams, State, Trajectory, sample_trajectory

DEFAULT_DELTA = 1e-4


def group_advantages(rewards, delta: float = DEFAULT_DELTA):
    """Return ``(mu, sigma, advantages)`` along the last axis.

    ``sigma`` is the population (divide-by-|G|) standard deviation. Groups whose
    rewards are all equal get zero advantages even when ``delta == 0``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    mu = r.mean(axis=-1, keepdims=True)
    centered = r - mu
    flat = np.ptp(r, axis=-1, keepdims=True) == 0
    centered = np.where(flat, 0.0, centered)
    sigma = np.sqrt(np.mean(centered**2, axis=-1, keepdims=True))
    denom = sigma + delta
    adv = np.divide(centered, denom, out=np.zeros_like(centered), where=denom > 0)
    return mu[..., 0], sigma[..., 0], adv


@dataclass(frozen=True, eq=False)
class Group:
    trajectories: tuple[Trajectory, ...]
    rewards: np.ndarray
    mu: float
    sigma: float
    advantages: np.ndarray
    delta: float = DEFAULT_DELTA

    @classmethod
    def from_rewards(cls, trajectories, rewards, delta: float = DEFAULT_DELTA) -> "Group":
        trajectories = tuple(trajectories)
        rewards = np.array(rewards, dtype=np.float64)
        if len(trajectories) != len(rewards):
            raise DomainError("one reward per trajectory is required")
        if len(trajectories) == 0:
            raise DomainError("a group needs at least one trajectory")
        mu, sigma, adv = group_advantages(rewards, delta)
        rewards.setflags(write=False)
        adv.setflags(write=False)
        return cls(trajectories, rewards, float(mu), float(sigma), adv, float(delta))

    def __len__(self):
        return len(self.trajectories)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([t.length for t in self.trajectories])


def sample_group(
    old: PolicyParams,
    prompt: State,
    g: int,
    spec: RewardSpec,
    rng: np.random.Generator,
    delta: float = DEFAULT_DELTA,
) -> Group:
    if g < 2:
        raise ConfigError(f"group size must be >= 2, got {g}", "group_size")
    trajs = [sample_trajectory(old, prompt, rng) for _ in range(g)]
    return Group.from_rewards(trajs, [reward(spec, t) for t in trajs], delta)


def sample_group_indices(probs, n_groups: int, g: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``(n_groups, g)`` i.i.d. trajectory indices from an enumerated distribution."""
    p = np.asarray(probs, dtype=np.float64)
    return rng.choice(len(p), size=(n_groups, g), p=p / p.sum())


@dataclass(frozen=True)
class PopulationStats:
    """Expectations under the old policy that scale the decompositions.

    ``mu_bar`` and ``t_inv`` are exact; ``sigma_bar`` is a Monte Carlo mean
    over ``mc_samples`` groups with standard error ``sigma_bar_se``.
    """

    mu_bar: float
    sigma_bar: float
    sigma_bar_se: float
    t_inv: float
    group_size: int
    mc_samples: int
    mu_bar_se: float = 0.0
    t_inv_se: float = 0.0


def group_population_stats(
    old: PolicyParams,
    prompt: State,
    spec: RewardSpec,
    g: int,
    mc_samples: int,
    rng: np.random.Generator,
    space: TrajectorySpace | None = None,
    chunk: int = 50_000,
) -> PopulationStats:
    if g < 2:
        raise ConfigError(f"group size must be >= 2, got {g}", "group_size")
    if mc_samples < 1000:
        raise ConfigError(f"need at least 1000 Monte Carlo groups, got {mc_samples}", "mc_samples")
    space = enumerate_trajectories(old.space, prompt) if space is None else space
    p = space.probabilities(old)
    r = space.rewards(spec)
    sigmas = np.empty(mc_samples)
    for start in range(0, mc_samples, chunk):
        m = min(chunk, mc_samples - start)
        idx = sample_group_indices(p, m, g, rng)
        sigmas[start : start + m] = group_advantages(r[idx], 0.0)[1]
    return PopulationStats(
        mu_bar=float(p @ r),
        sigma_bar=float(sigmas.mean()),
        sigma_bar_se=float(sigmas.std(ddof=1) / np.sqrt(mc_samples)),
        t_inv=float(p @ space.inverse_lengths),
        group_size=int(g),
        mc_samples=int(mc_samples),
    )
