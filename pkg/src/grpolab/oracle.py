"""Exact ground truth by enumeration, estimator bias studies and smoothness probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import RewardSpec, Task, TrajectorySpace
from .errors import DegenerateTaskError, DomainError
from .groups import DEFAULT_DELTA, PopulationStats, group_population_stats
from .mc import BatchedEstimator, mc_group_moments
from .objectives import EstimatorSpec
from .policy import PolicyParams, ReferencePolicy, State, kl_grad, score


@dataclass(frozen=True, eq=False)
class ExactGradients:
    """Return, KL-penalized objective and their exact gradients.

    ``kl`` is the expected sum of per-step KL divergences along a trajectory.
    """

    J: float
    grad_J: np.ndarray
    J_kl: float
    grad_J_kl: np.ndarray
    kl: float = 0.0


def trajectory_kl(theta: PolicyParams, ref: ReferencePolicy, space: TrajectorySpace) -> np.ndarray:
    """Per-trajectory sum of exact per-step KL(pi_theta || pi_ref)."""
    row_kl = np.sum(theta.probs * (theta.log_probs - ref.params.log_probs), axis=1)
    return np.where(space.mask, row_kl[space.step_state], 0.0).sum(axis=1)


def exact_J_and_grad(
    theta: PolicyParams,
    space: TrajectorySpace,
    spec: RewardSpec,
    beta: float = 0.0,
    ref: ReferencePolicy | None = None,
) -> ExactGradients:
    p = space.probabilities(theta)
    r = space.rewards(spec)
    J = float(p @ r)
    grad = space.accumulate_scores(theta, p * r)
    if beta == 0.0 and ref is None:
        return ExactGradients(J, grad, J, grad.copy(), 0.0)
    if ref is None:
        raise DomainError("a reference policy is required when beta > 0")
    k = trajectory_kl(theta, ref, space)
    kl = float(p @ k)
    # d/dtheta sum_tau P_tau K_tau = sum_tau P_tau K_tau grad log P_tau + sum_s visit(s) grad KL_s
    diff = theta.log_probs - ref.params.log_probs
    row_grad = theta.probs * (diff - np.sum(theta.probs * diff, axis=1, keepdims=True))
    kl_grad_total = space.accumulate_scores(theta, p * k) + (space.state_visitation(theta)[:, None] * row_grad).reshape(-1)
    return ExactGradients(J, grad, J - beta * kl, grad - beta * kl_grad_total, kl)


def task_gradients(theta: PolicyParams, task: Task, beta: float = 0.0, ref=None) -> ExactGradients:
    return exact_J_and_grad(theta, task.trajectories, task.reward_spec, beta, ref)


@dataclass(frozen=True, eq=False)
class BiasStudy:
    """Monte Carlo mean of an estimator against the two scaled exact gradients.

    ``z_*`` is the largest componentwise ``|mc_mean - target| / se`` with ``se``
    combining the Monte Carlo error and the target's error through
    ``sigma_bar``. ``separation`` is the same statistic between the two targets.
    """

    estimator: EstimatorSpec
    mc_mean: np.ndarray
    mc_stderr: np.ndarray
    target_current: np.ndarray
    target_old: np.ndarray
    z_current: float
    z_old: float
    separation: float
    samples: int
    group_size: int
    stats: PopulationStats
    quantity: str = "estimate"
    target_current_stderr: np.ndarray | None = None
    target_old_stderr: np.ndarray | None = None


def max_z(diff: np.ndarray, se: np.ndarray, atol: float = 1e-12) -> float:
    diff = np.abs(diff)
    live = se > 0
    z = float(np.max(diff[live] / se[live])) if live.any() else 0.0
    if np.any(diff[~live] > atol):
        return float("inf")
    return z


def estimator_bias_study(
    theta: PolicyParams,
    theta_old: PolicyParams,
    estimator: EstimatorSpec,
    samples: int,
    rng: np.random.Generator,
    *,
    task: Task,
    group_size: int = 8,
    delta: float = DEFAULT_DELTA,
    stats: PopulationStats | None = None,
    stats_samples: int = 200_000,
    ref: ReferencePolicy | None = None,
    min_samples: int = 10_000,
    quantity: str = "estimate",
) -> BiasStudy:
    """Compare the Monte Carlo mean of an estimator with ``(E[1/|s_T|] / sigma_bar) grad J``
    at both the current and the old parameters.

    ``quantity="unbiased-term"`` studies the scaled unbiased piece of the
    estimator's decomposition instead of the full estimate.
    """
    if quantity not in ("estimate", "unbiased-term"):
        raise DomainError(f"unknown quantity {quantity!r}")
    if samples < min_samples:
        raise DomainError(f"bias study needs at least {min_samples} groups, got {samples}")
    if estimator.ratio_mode != "none" and estimator.clip.mode != "disabled":
        raise DomainError("bias studies compare against unclipped targets; disable clipping")
    space = task.trajectories
    if stats is None:
        stats = group_population_stats(
            theta_old, task.prompt, task.reward_spec, group_size, stats_samples, rng, space=space
        )
    if stats.sigma_bar < 1e-8:
        raise DegenerateTaskError(f"expected group std {stats.sigma_bar:.3g} is below 1e-8")

    batched = BatchedEstimator(space, theta, theta_old, estimator, ref)
    probs, rewards = space.probabilities(theta_old), space.rewards(task.reward_spec)
    if quantity == "estimate":
        fn = lambda idx, adv, r: batched.estimates(idx, adv)  # noqa: E731
    else:
        fn = lambda idx, adv, r: batched.decomposition(idx, adv, r, stats)["scaled_unbiased_term"]  # noqa: E731
    mean, se = mc_group_moments(fn, probs, rewards, samples, group_size, rng, delta)

    scale = stats.t_inv / stats.sigma_bar
    rel = stats.sigma_bar_se / stats.sigma_bar
    grad_cur = exact_J_and_grad(theta, space, task.reward_spec, estimator.beta, ref).grad_J_kl
    grad_old = exact_J_and_grad(theta_old, space, task.reward_spec, estimator.beta, ref).grad_J_kl
    t_cur, t_old = scale * grad_cur, scale * grad_old
    tse_cur, tse_old = np.abs(t_cur) * rel, np.abs(t_old) * rel
    return BiasStudy(
        estimator=estimator,
        mc_mean=mean,
        mc_stderr=se,
        target_current=t_cur,
        target_old=t_old,
        z_current=max_z(mean - t_cur, np.hypot(se, tse_cur)),
        z_old=max_z(mean - t_old, np.hypot(se, tse_old)),
        separation=max_z(t_cur - t_old, np.hypot(se, np.abs(t_cur - t_old) * rel)),
        samples=int(samples),
        group_size=int(group_size),
        stats=stats,
        quantity=quantity,
        target_current_stderr=tse_cur,
        target_old_stderr=tse_old,
    )


@dataclass(frozen=True)
class SmoothnessReport:
    """Empirical Lipschitz constants of the score and of the KL gradient."""

    score_lipschitz: float
    kl_lipschitz: float
    n_pairs: int
    n_skipped: int


def random_pairs(space, n: int, radius: float, rng: np.random.Generator):
    """Parameter pairs drawn uniformly from the box ``||theta||_inf <= radius``."""
    shape = (space.n_states, space.vocab.size)
    return [
        (PolicyParams(space, rng.uniform(-radius, radius, shape)), PolicyParams(space, rng.uniform(-radius, radius, shape)))
        for _ in range(n)
    ]


def smoothness_probe(
    theta_pairs, states: list[State], ref: ReferencePolicy, min_distance: float = 1e-6
) -> SmoothnessReport:
    """Largest observed ``||d grad log pi|| / ||d theta||`` and ``||d grad KL|| / ||d theta||``."""
    l_score = l_kl = 0.0
    used = skipped = 0
    for a, b in theta_pairs:
        dist = np.linalg.norm(a.flat - b.flat)
        if dist < min_distance:
            skipped += 1
            continue
        used += 1
        for s in states:
            for tok in range(a.space.vocab.size):
                l_score = max(l_score, np.linalg.norm(score(a, s, tok) - score(b, s, tok)) / dist)
            l_kl = max(l_kl, np.linalg.norm(kl_grad(a, ref, s) - kl_grad(b, ref, s)) / dist)
    return SmoothnessReport(float(l_score), float(l_kl), used, skipped)
