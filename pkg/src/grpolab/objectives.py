"""Clipped surrogate objectives, their gradient estimators and error decompositions.

Three estimators share one interface:

* token-ratio (GRPO): per-step ratio ``w = pi_theta / pi_old`` inside
  ``min{w A, clip(w) A}``;
* trajectory-ratio (TIC-GRPO): one ratio ``w' = P_theta / P_old`` per
  trajectory inside ``clip_bar(w') A``;
* no-ratio ablation: the plain score-function estimate at the old policy.

The gradient of a clipped branch is zero whenever the clipped constant is the
active branch; exact ties at a boundary take the unclipped branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateTaskError, DomainError
from .groups import Group, PopulationStats
from .policy import PolicyParams, ReferencePolicy, Trajectory, step_logprobs

CLIP_MODES = ("two-sided-min", "upper-only", "disabled")
RATIO_MODES = ("token", "trajectory", "none")
LENGTH_NORMS = ("mean", "dapo")
KL_ESTIMATORS = ("exact", "k3")


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    mode: str = "two-sided-min"

    def __post_init__(self):
        if self.mode not in CLIP_MODES:
            raise DomainError(f"unknown clip mode {self.mode!r}; expected one of {CLIP_MODES}")
        if self.eps_low < 0 or self.eps_high < 0:
            raise DomainError("clip epsilons must be non-negative")

    @classmethod
    def disabled(cls) -> "ClipConfig":
        return cls(mode="disabled")


def clip(x, cfg: ClipConfig):
    """Piecewise clamp of ``x`` to ``[1 - eps_low, 1 + eps_high]``."""
    if cfg.mode == "disabled":
        return x
    out = np.clip(x, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high)
    return float(out) if np.ndim(out) == 0 else out


def clip_bar(x, cfg: ClipConfig):
    """Upper-only clamp ``min(x, clip(x)) = min(x, 1 + eps_high)``."""
    if cfg.mode == "disabled":
        return x
    out = np.minimum(x, 1.0 + cfg.eps_high)
    return float(out) if np.ndim(out) == 0 else out


def clip_active(ratio, advantage, cfg: ClipConfig):
    """Whether the ratio-dependent (unclipped) branch of the surrogate is active."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if cfg.mode == "disabled":
        return np.ones(ratio.shape, dtype=bool)
    upper = ratio <= 1.0 + cfg.eps_high
    if cfg.mode == "upper-only":
        return upper
    return np.where(np.asarray(advantage) >= 0, upper, ratio >= 1.0 - cfg.eps_low)


def surrogate(ratio, advantage, cfg: ClipConfig):
    ratio = np.asarray(ratio, dtype=np.float64)
    if cfg.mode == "disabled":
        return ratio * advantage
    if cfg.mode == "upper-only":
        return clip_bar(ratio, cfg) * advantage
    return np.minimum(ratio * advantage, clip(ratio, cfg) * advantage)


@dataclass(frozen=True)
class EstimatorSpec:
    ratio_mode: str = "token"
    clip: ClipConfig = field(default_factory=ClipConfig)
    length_norm: str = "mean"
    beta: float = 0.0
    kl_estimator: str = "exact"

    def __post_init__(self):
        if self.ratio_mode not in RATIO_MODES:
            raise DomainError(f"unknown ratio mode {self.ratio_mode!r}")
        if self.length_norm not in LENGTH_NORMS:
            raise DomainError(f"unknown length normalization {self.length_norm!r}")
        if self.kl_estimator not in KL_ESTIMATORS:
            raise DomainError(f"unknown KL estimator {self.kl_estimator!r}")
        if self.beta < 0:
            raise DomainError("beta must be non-negative")

    @classmethod
    def grpo(cls, eps_low=0.2, eps_high=0.28, **kw) -> "EstimatorSpec":
        return cls("token", ClipConfig(eps_low, eps_high, "two-sided-min"), **kw)

    @classmethod
    def tic(cls, eps_high=0.28, eps_low=0.2, **kw) -> "EstimatorSpec":
        return cls("trajectory", ClipConfig(eps_low, eps_high, "upper-only"), **kw)

    @classmethod
    def ablation(cls, **kw) -> "EstimatorSpec":
        return cls("none", ClipConfig.disabled(), **kw)

    def unclipped(self) -> "EstimatorSpec":
        return replace(self, clip=ClipConfig.disabled())


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    vector: np.ndarray
    estimator: EstimatorSpec
    clip_fraction: float = 0.0
    mean_ratio: float = 1.0
    max_ratio: float = 1.0

    def __len__(self):
        return len(self.vector)


def token_ratio(theta: PolicyParams, theta_old: PolicyParams, traj: Trajectory, t: int) -> float:
    lp = step_logprobs(theta, traj)[t]
    lpo = step_logprobs(theta_old, traj)[t]
    return float(np.exp(lp - lpo))


def token_ratios(theta: PolicyParams, theta_old: PolicyParams, traj: Trajectory) -> np.ndarray:
    return np.exp(step_logprobs(theta, traj) - step_logprobs(theta_old, traj))


def traj_ratio(theta: PolicyParams, theta_old: PolicyParams, traj: Trajectory) -> float:
    return float(np.exp(np.sum(step_logprobs(theta, traj)) - np.sum(step_logprobs(theta_old, traj))))


def length_coefficients(group: Group, length_norm: str = "mean") -> np.ndarray:
    """Per-trajectory weight in front of the inner token sum."""
    lens = group.lengths.astype(np.float64)
    if length_norm == "mean":
        return 1.0 / (len(group) * lens)
    return np.full(len(group), 1.0 / lens.sum())


def _check_group(group: Group):
    if group is None or len(group) == 0:
        raise DomainError("empty group")


def _add_step_scores(out: np.ndarray, params: PolicyParams, traj: Trajectory, coefs):
    """out += sum_t coefs[t] * grad log pi(a_t | s_t), accumulated in (S, V) layout."""
    probs = params.probs
    for sid, a, c in zip(traj.state_ids, traj.tokens, np.broadcast_to(coefs, (traj.length,))):
        if c != 0.0:
            out[sid] -= c * probs[sid]
            out[sid, a] += c


def _penalty_grad(theta: PolicyParams, group: Group, coefs, spec: EstimatorSpec, ref) -> np.ndarray:
    out = np.zeros_like(theta.logits)
    if spec.beta == 0.0:
        return out
    if ref is None:
        raise DomainError("a reference policy is required when beta > 0")
    probs, logp, logq = theta.probs, theta.log_probs, ref.params.log_probs
    for traj, c in zip(group.trajectories, coefs):
        if spec.kl_estimator == "exact":
            for sid in traj.state_ids:
                diff = logp[sid] - logq[sid]
                out[sid] += c * probs[sid] * (diff - probs[sid] @ diff)
        else:
            r = np.exp(logq[traj.state_ids, traj.tokens] - logp[traj.state_ids, traj.tokens])
            _add_step_scores(out, theta, traj, c * (1.0 - r))
    return spec.beta * out


def penalty_value(theta: PolicyParams, group: Group, spec: EstimatorSpec, ref) -> float:
    """beta times the length-normalized sum of per-step KL terms."""
    if spec.beta == 0.0:
        return 0.0
    if ref is None:
        raise DomainError("a reference policy is required when beta > 0")
    coefs = length_coefficients(group, spec.length_norm)
    logp, logq, probs = theta.log_probs, ref.params.log_probs, theta.probs
    total = 0.0
    for traj, c in zip(group.trajectories, coefs):
        ids, toks = np.asarray(traj.state_ids), np.asarray(traj.tokens)
        if spec.kl_estimator == "exact":
            kl = np.sum(probs[ids] * (logp[ids] - logq[ids]), axis=1)
        else:
            log_r = logq[ids, toks] - logp[ids, toks]
            kl = np.exp(log_r) - log_r - 1.0
        total += c * kl.sum()
    return spec.beta * total


def grpo_gradient(theta, theta_old, group: Group, spec: EstimatorSpec, ref=None) -> GradientEstimate:
    """Gradient of the token-ratio clipped surrogate minus the KL penalty."""
    _check_group(group)
    if spec.ratio_mode != "token":
        raise DomainError("grpo_gradient needs ratio_mode='token'")
    coefs = length_coefficients(group, spec.length_norm)
    out = np.zeros_like(theta.logits)
    ratios, outside = [], 0
    for traj, c, adv in zip(group.trajectories, coefs, group.advantages):
        w = token_ratios(theta, theta_old, traj)
        act = clip_active(w, adv, spec.clip)
        ratios.append(w)
        outside += int(np.count_nonzero(~act))
        _add_step_scores(out, theta, traj, c * adv * w * act)
    out -= _penalty_grad(theta, group, coefs, spec, ref)
    ratios = np.concatenate(ratios)
    return GradientEstimate(
        out.reshape(-1), spec, outside / len(ratios), float(ratios.mean()), float(ratios.max())
    )


def tic_gradient(theta, theta_old, group: Group, spec: EstimatorSpec, ref=None) -> GradientEstimate:
    """Gradient of the trajectory-ratio upper-clipped surrogate minus the KL penalty."""
    _check_group(group)
    if spec.ratio_mode != "trajectory":
        raise DomainError("tic_gradient needs ratio_mode='trajectory'")
    coefs = length_coefficients(group, spec.length_norm)
    out = np.zeros_like(theta.logits)
    ratios = np.array([traj_ratio(theta, theta_old, t) for t in group.trajectories])
    act = clip_active(ratios, group.advantages, spec.clip)
    for traj, c, adv, w, a in zip(group.trajectories, coefs, group.advantages, ratios, act):
        if a:
            _add_step_scores(out, theta, traj, c * adv * w)
    out -= _penalty_grad(theta, group, coefs, spec, ref)
    return GradientEstimate(
        out.reshape(-1), spec, float(np.mean(~act)), float(ratios.mean()), float(ratios.max())
    )


def ablation_gradient(
    theta_old: PolicyParams,
    group: Group,
    ref=None,
    beta: float = 0.0,
    *,
    theta: PolicyParams | None = None,
    spec: EstimatorSpec | None = None,
) -> GradientEstimate:
    """Score-function estimate at the old policy; no ratios and no clipping.

    The KL penalty, when ``beta > 0``, is taken at the current ``theta``.
    """
    _check_group(group)
    spec = EstimatorSpec.ablation(beta=beta) if spec is None else replace(spec, beta=beta)
    theta = theta_old if theta is None else theta
    coefs = length_coefficients(group, spec.length_norm)
    out = np.zeros_like(theta_old.logits)
    for traj, c, adv in zip(group.trajectories, coefs, group.advantages):
        _add_step_scores(out, theta_old, traj, c * adv)
    out -= _penalty_grad(theta, group, coefs, spec, ref)
    return GradientEstimate(out.reshape(-1), spec, 0.0, 1.0, 1.0)


def estimate_gradient(theta, theta_old, group: Group, spec: EstimatorSpec, ref=None) -> GradientEstimate:
    if spec.ratio_mode == "token":
        return grpo_gradient(theta, theta_old, group, spec, ref)
    if spec.ratio_mode == "trajectory":
        return tic_gradient(theta, theta_old, group, spec, ref)
    return ablation_gradient(theta_old, group, ref, spec.beta, theta=theta, spec=spec)


def grpo_objective(theta, theta_old, group: Group, spec: EstimatorSpec, ref=None) -> float:
    """Token-ratio clipped surrogate value (the scalar whose gradient grpo_gradient returns)."""
    _check_group(group)
    coefs = length_coefficients(group, spec.length_norm)
    total = 0.0
    for traj, c, adv in zip(group.trajectories, coefs, group.advantages):
        total += c * np.sum(surrogate(token_ratios(theta, theta_old, traj), adv, spec.clip))
    return float(total - penalty_value(theta, group, spec, ref))


def tic_objective(theta, theta_old, group: Group, spec: EstimatorSpec, ref=None) -> float:
    """Trajectory-ratio surrogate value; the ratio term enters once per trajectory."""
    _check_group(group)
    coefs = length_coefficients(group, spec.length_norm)
    ratios = np.array([traj_ratio(theta, theta_old, t) for t in group.trajectories])
    total = float(np.sum(coefs * surrogate(ratios, group.advantages, spec.clip)))
    return total - penalty_value(theta, group, spec, ref)


@dataclass(eq=False)
class DecompositionReport:
    """Named additive pieces of a surrogate's Gradient Term.

    ``terms`` sum to ``whole`` up to ``residual``. ``scale`` is the factor
    ``E[1/|s_T|] / E[sigma_G]`` multiplying the unbiased estimate.
    """

    terms: dict[str, np.ndarray]
    whole: np.ndarray
    residual: float
    scale: float
    unbiased_estimate: np.ndarray

    def norms(self) -> dict[str, float]:
        return {k: float(np.linalg.norm(v)) for k, v in self.terms.items()}


def _check_stats(stats: PopulationStats):
    if not stats.sigma_bar > 0:
        raise DegenerateTaskError("expected group std is zero; the decomposition divides by it")


def _report(terms: dict, whole: np.ndarray, scale: float, unbiased: np.ndarray) -> DecompositionReport:
    total = np.sum([v for v in terms.values()], axis=0)
    return DecompositionReport(terms, whole, float(np.linalg.norm(whole - total)), scale, unbiased)


def decompose_grpo(theta, theta_old, group: Group, spec: EstimatorSpec, stats: PopulationStats) -> DecompositionReport:
    """Split the token-ratio Gradient Term into an unbiased old-policy estimate plus errors.

    With ``l_i = |G| * coef_i`` (``1/|s_i|`` for mean normalization),
    ``q_i = (r_i - mu_bar) / sigma_bar`` and the event indicator ``b`` of the
    unclipped branch::

        whole   = 1/|G| sum_i l_i sum_t b w grad log pi_theta A_i
        unbiased= T/sigma_bar 1/|G| sum_i sum_t grad log pi_old (r_i - mu_bar)
        grad_err= T/sigma_bar 1/|G| sum_i sum_t (w grad log pi_theta - grad log pi_old)(r_i - mu_bar)
        se1     = T 1/|G| sum_i sum_t b w grad log pi_theta (A_i - q_i)
        se2     = 1/|G| sum_i (l_i - T) sum_t b w grad log pi_theta A_i
        clip    = -T/sigma_bar 1/|G| sum_i sum_t (1 - b) w grad log pi_theta (r_i - mu_bar)
    """
    _check_group(group)
    _check_stats(stats)
    g = len(group)
    ell = g * length_coefficients(group, spec.length_norm)
    T, sbar, mubar = stats.t_inv, stats.sigma_bar, stats.mu_bar
    S, V = theta.logits.shape
    whole, unb, gerr, se1, se2, clp = (np.zeros((S, V)) for _ in range(6))
    for traj, l_i, adv, r in zip(group.trajectories, ell, group.advantages, group.rewards):
        w = token_ratios(theta, theta_old, traj)
        b = clip_active(w, adv, spec.clip).astype(np.float64)
        q, c = (r - mubar) / sbar, r - mubar
        _add_step_scores(whole, theta, traj, l_i * b * w * adv / g)
        _add_step_scores(unb, theta_old, traj, c / g)
        _add_step_scores(gerr, theta, traj, T / sbar * w * c / g)
        _add_step_scores(gerr, theta_old, traj, -T / sbar * c / g)
        _add_step_scores(se1, theta, traj, T * b * w * (adv - q) / g)
        _add_step_scores(se2, theta, traj, (l_i - T) * b * w * adv / g)
        _add_step_scores(clp, theta, traj, -T / sbar * (1.0 - b) * w * c / g)
    scale = T / sbar
    terms = {
        "scaled_unbiased_term": scale * unb.reshape(-1),
        "gradient_error": gerr.reshape(-1),
        "sampling_error_1": se1.reshape(-1),
        "sampling_error_2": se2.reshape(-1),
        "clip_error": clp.reshape(-1),
    }
    return _report(terms, whole.reshape(-1), scale, unb.reshape(-1))


def decompose_tic(theta, theta_old, group: Group, spec: EstimatorSpec, stats: PopulationStats) -> DecompositionReport:
    """Trajectory-ratio analogue of :func:`decompose_grpo`; no gradient-error term.

    The unbiased piece ``1/|G| sum_i w'_i grad log P_theta(s_i) (r_i - mu_bar)``
    has expectation grad J(theta) under the old policy.
    """
    _check_group(group)
    _check_stats(stats)
    g = len(group)
    ell = g * length_coefficients(group, spec.length_norm)
    T, sbar, mubar = stats.t_inv, stats.sigma_bar, stats.mu_bar
    S, V = theta.logits.shape
    whole, unb, se1, se2, clp = (np.zeros((S, V)) for _ in range(5))
    ratios = np.array([traj_ratio(theta, theta_old, t) for t in group.trajectories])
    act = clip_active(ratios, group.advantages, spec.clip).astype(np.float64)
    for traj, l_i, adv, r, w, d in zip(group.trajectories, ell, group.advantages, group.rewards, ratios, act):
        q, c = (r - mubar) / sbar, r - mubar
        _add_step_scores(whole, theta, traj, l_i * d * w * adv / g)
        _add_step_scores(unb, theta, traj, w * c / g)
        _add_step_scores(se1, theta, traj, T * d * w * (adv - q) / g)
        _add_step_scores(se2, theta, traj, (l_i - T) * d * w * adv / g)
        _add_step_scores(clp, theta, traj, -T / sbar * (1.0 - d) * w * c / g)
    scale = T / sbar
    terms = {
        "scaled_unbiased_term": scale * unb.reshape(-1),
        "sampling_error_1": se1.reshape(-1),
        "sampling_error_2": se2.reshape(-1),
        "clip_error": clp.reshape(-1),
    }
    return _report(terms, whole.reshape(-1), scale, unb.reshape(-1))
