"""Vectorized group estimators over an enumerated trajectory space.

Every estimator in :mod:`grpolab.objectives` is a sum over group members of a
per-trajectory vector that depends only on the trajectory and the sign of its
advantage. Precomputing those vectors once per ``(theta, theta_old)`` turns a
Monte Carlo study over ``10**5`` groups into a few array contractions.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import gammaln

from .env import TrajectorySpace
from .errors import DegenerateTaskError, DomainError, ResourceError
from .groups import PopulationStats, group_advantages, sample_group_indices
from .objectives import EstimatorSpec, _add_step_scores, clip_active
from .policy import PolicyParams, ReferencePolicy

DENSE_BUDGET = 20_000_000


class BatchedEstimator:
    """Per-trajectory building blocks of one estimator at fixed ``(theta, theta_old)``."""

    def __init__(
        self,
        space: TrajectorySpace,
        theta: PolicyParams,
        theta_old: PolicyParams,
        spec: EstimatorSpec,
        ref: ReferencePolicy | None = None,
    ):
        n, dim = len(space), theta.dim
        if 4 * n * dim > DENSE_BUDGET:
            raise ResourceError(f"dense per-trajectory tables need {4 * n * dim} floats, above {DENSE_BUDGET}")
        self.space, self.spec = space, spec
        self.lengths = space.lengths.astype(np.float64)
        trajs = space.trajectories
        S, V = theta.logits.shape

        lp, lpo = space.step_logprobs(theta), space.step_logprobs(theta_old)
        score_new = np.zeros((n, S, V))
        score_old = np.zeros((n, S, V))
        for j, t in enumerate(trajs):
            _add_step_scores(score_old[j], theta_old, t, 1.0)
        self.score_old = score_old.reshape(n, -1)

        if spec.ratio_mode == "token":
            w = np.where(space.mask, np.exp(lp - lpo), 0.0)
            pos = np.zeros((n, S, V))
            neg = np.zeros((n, S, V))
            for j, t in enumerate(trajs):
                wj = w[j, : t.length]
                _add_step_scores(score_new[j], theta, t, wj)
                _add_step_scores(pos[j], theta, t, wj * clip_active(wj, 1.0, spec.clip))
                _add_step_scores(neg[j], theta, t, wj * clip_active(wj, -1.0, spec.clip))
            self.weighted_all = score_new.reshape(n, -1)
            self.active_pos, self.active_neg = pos.reshape(n, -1), neg.reshape(n, -1)
        elif spec.ratio_mode == "trajectory":
            w = np.exp(lp.sum(axis=1) - lpo.sum(axis=1))
            for j, t in enumerate(trajs):
                _add_step_scores(score_new[j], theta, t, 1.0)
            full = w[:, None] * score_new.reshape(n, -1)
            self.weighted_all = full
            self.active_pos = full * clip_active(w, 1.0, spec.clip)[:, None]
            self.active_neg = full * clip_active(w, -1.0, spec.clip)[:, None]
        else:
            self.weighted_all = self.score_old
            self.active_pos = self.active_neg = self.score_old

        self.penalty = None
        if spec.beta > 0:
            if ref is None:
                raise DomainError("a reference policy is required when beta > 0")
            pen = np.zeros((n, S, V))
            probs, logp, logq = theta.probs, theta.log_probs, ref.params.log_probs
            for j, t in enumerate(trajs):
                if spec.kl_estimator == "exact":
                    for sid in t.state_ids:
                        diff = logp[sid] - logq[sid]
                        pen[j, sid] += probs[sid] * (diff - probs[sid] @ diff)
                else:
                    r = np.exp(logq[t.state_ids, t.tokens] - logp[t.state_ids, t.tokens])
                    _add_step_scores(pen[j], theta, t, 1.0 - r)
            self.penalty = spec.beta * pen.reshape(n, -1)

    def coefficients(self, idx: np.ndarray) -> np.ndarray:
        lens = self.lengths[idx]
        if self.spec.length_norm == "mean":
            return 1.0 / (idx.shape[-1] * lens)
        return np.broadcast_to(1.0 / lens.sum(axis=-1, keepdims=True), idx.shape)

    def _active(self, idx, adv):
        return np.where((adv >= 0)[..., None], self.active_pos[idx], self.active_neg[idx])

    def estimates(self, idx: np.ndarray, adv: np.ndarray) -> np.ndarray:
        """(M, D) gradient estimates for M groups given indices and advantages."""
        c = self.coefficients(idx)
        out = np.einsum("mg,mgd->md", c * adv, self._active(idx, adv))
        if self.penalty is not None:
            out -= np.einsum("mg,mgd->md", c, self.penalty[idx])
        return out

    def decomposition(self, idx, adv, rewards, stats: PopulationStats) -> dict[str, np.ndarray]:
        """Batched version of ``decompose_grpo`` / ``decompose_tic`` terms, each (M, D)."""
        if self.spec.ratio_mode == "none":
            raise DomainError("the ablation estimator has no decomposition")
        if not stats.sigma_bar > 0:
            raise DegenerateTaskError("expected group std is zero")
        g = idx.shape[-1]
        T, sbar = stats.t_inv, stats.sigma_bar
        ell = g * self.coefficients(idx)
        c = rewards - stats.mu_bar
        q = c / sbar
        act = self._active(idx, adv)
        full = self.weighted_all[idx]

        def contract(weights, vectors):
            return np.einsum("mg,mgd->md", weights, vectors) / g

        if self.spec.ratio_mode == "token":
            unbiased = contract(c, self.score_old[idx])
            terms = {"scaled_unbiased_term": T / sbar * unbiased}
            terms["gradient_error"] = T / sbar * (contract(c, full) - unbiased)
        else:
            terms = {"scaled_unbiased_term": T / sbar * contract(c, full)}
        terms["sampling_error_1"] = T * contract(adv - q, act)
        terms["sampling_error_2"] = contract((ell - T) * adv, act)
        terms["clip_error"] = -T / sbar * contract(c, full - act)
        terms["whole"] = contract(ell * adv, act)
        return terms


class RunningMoments:
    """Chunk-wise mean and variance (Chan et al. parallel update)."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, None, None

    def update(self, batch: np.ndarray):
        m = len(batch)
        if m == 0:
            return
        bmean = batch.mean(axis=0)
        bm2 = ((batch - bmean) ** 2).sum(axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2 = m, bmean, bm2
            return
        n = self.n + m
        delta = bmean - self.mean
        self.mean = self.mean + delta * m / n
        self.m2 = self.m2 + bm2 + delta**2 * self.n * m / n
        self.n = n

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def mc_group_moments(
    fn,
    probs: np.ndarray,
    rewards: np.ndarray,
    n_groups: int,
    g: int,
    rng: np.random.Generator,
    delta: float,
    chunk: int = 20_000,
):
    """Mean and standard error of ``fn(idx, adv, r)`` over i.i.d. groups.

    ``fn`` returns either an array (M, D) or a dict of such arrays.
    """
    acc: dict = {}
    for start in range(0, n_groups, chunk):
        m = min(chunk, n_groups - start)
        idx = sample_group_indices(probs, m, g, rng)
        r = rewards[idx]
        adv = group_advantages(r, delta)[2]
        out = fn(idx, adv, r)
        items = out.items() if isinstance(out, dict) else [(None, out)]
        for k, v in items:
            acc.setdefault(k, RunningMoments()).update(v)
    if list(acc) == [None]:
        mom = acc[None]
        return mom.mean, mom.stderr
    return {k: (m.mean, m.stderr) for k, m in acc.items()}


def multiset_count(n: int, g: int) -> int:
    return math.comb(n + g - 1, g)


def exact_group_expectation(fn, probs, rewards, g: int, delta: float, budget: int = 2_000_000, chunk: int = 50_000):
    """Exact expectation over i.i.d. groups of a permutation-symmetric statistic.

    Sums ``fn`` over every multiset of ``g`` trajectory indices weighted by its
    multinomial probability.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    total = multiset_count(n, g)
    if total > budget:
        raise ResourceError(f"{total} multisets exceed the budget of {budget}")
    logp = np.log(np.maximum(probs, 1e-300))
    log_gfact = math.lgamma(g + 1)
    it = itertools.combinations_with_replacement(range(n), g)
    acc, weight = None, 0.0
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        counts = np.zeros((len(block), n))
        np.add.at(counts, (np.repeat(np.arange(len(block)), g), block.ravel()), 1.0)
        lw = log_gfact - gammaln(counts + 1).sum(axis=1) + logp[block].sum(axis=1)
        w = np.exp(lw)
        r = rewards[block]
        adv = group_advantages(r, delta)[2]
        val = fn(block, adv, r)
        part = np.tensordot(w, val, axes=(0, 0))
        acc = part if acc is None else acc + part
        weight += w.sum()
    return acc, weight
