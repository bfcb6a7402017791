"""Terminal rewards and exhaustive trajectory enumeration."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, ResourceError
from .policy import PolicyParams, State, StateSpace, Trajectory, Vocab

REWARD_KINDS = ("target-sequence", "substring-count", "random-table")
DEFAULT_ENUMERATION_BUDGET = 100_000


@dataclass(frozen=True)
class RewardSpec:
    """Deterministic terminal reward bounded by ``bound`` in absolute value.

    * ``target-sequence``: 1 when the tokens equal ``target``, else 0.
    * ``substring-count``: ``bound * min(count, cap) / cap`` where ``count``
      is the number of (overlapping) occurrences of ``pattern``.
    * ``random-table``: a value drawn uniformly from ``[-bound, bound]``,
      keyed by ``seed`` and the full token sequence.
    """

    kind: str = "target-sequence"
    bound: float = 1.0
    target: tuple[int, ...] | None = None
    pattern: tuple[int, ...] | None = None
    cap: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise DomainError(f"unknown reward kind {self.kind!r}; expected one of {REWARD_KINDS}")
        if not self.bound > 0:
            raise DomainError("reward bound must be positive")
        if self.kind == "target-sequence":
            if not self.target:
                raise DomainError("target-sequence reward needs a non-empty target")
            if self.bound < 1.0:
                raise DomainError("target-sequence reward is 1 on a match, so bound must be >= 1")
            object.__setattr__(self, "target", tuple(int(a) for a in self.target))
        if self.kind == "substring-count":
            if not self.pattern:
                raise DomainError("substring-count reward needs a non-empty pattern")
            if self.cap < 1:
                raise DomainError("substring-count cap must be >= 1")
            object.__setattr__(self, "pattern", tuple(int(a) for a in self.pattern))


def reward_tokens(spec: RewardSpec, tokens: tuple[int, ...], prompt_id: int = 0) -> float:
    if spec.kind == "target-sequence":
        return 1.0 if tuple(tokens) == spec.target else 0.0
    if spec.kind == "substring-count":
        k = len(spec.pattern)
        count = sum(tuple(tokens[i : i + k]) == spec.pattern for i in range(len(tokens) - k + 1))
        return spec.bound * min(count, spec.cap) / spec.cap
    seq = np.random.SeedSequence([spec.seed, prompt_id, len(tokens), *tokens])
    return float(spec.bound * (2.0 * np.random.default_rng(seq).random() - 1.0))


def reward(spec: RewardSpec, traj: Trajectory) -> float:
    if not traj.terminal:
        raise DomainError("reward is defined only for terminal trajectories")
    return reward_tokens(spec, traj.tokens, traj.prompt.prompt_id)


def trajectory_count(vocab: Vocab, t_max: int) -> int:
    """Number of terminal sequences: eos-terminated before the horizon, plus full length."""
    c = vocab.size - 1
    return sum(c ** (n - 1) for n in range(1, t_max)) + c ** (t_max - 1) * vocab.size


@dataclass(eq=False)
class TrajectorySpace:
    """Every terminal trajectory from one prompt, in a fixed (lexicographic) order.

    Per-step data is padded to the horizon; ``mask`` marks real steps.
    """

    space: StateSpace
    prompt: State
    trajectories: list[Trajectory]
    lengths: np.ndarray = field(init=False)
    step_state: np.ndarray = field(init=False)
    step_token: np.ndarray = field(init=False)
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        n, h = len(self.trajectories), self.space.horizon
        self.lengths = np.array([t.length for t in self.trajectories], dtype=np.int64)
        self.step_state = np.zeros((n, h), dtype=np.int64)
        self.step_token = np.zeros((n, h), dtype=np.int64)
        self.mask = np.zeros((n, h), dtype=bool)
        for i, t in enumerate(self.trajectories):
            self.step_state[i, : t.length] = t.state_ids
            self.step_token[i, : t.length] = t.tokens
            self.mask[i, : t.length] = True
        self._index = {t.tokens: i for i, t in enumerate(self.trajectories)}
        self._reward_cache: dict[RewardSpec, np.ndarray] = {}

    def __len__(self):
        return len(self.trajectories)

    @property
    def all_trajectories(self) -> list[Trajectory]:
        return self.trajectories

    def index_of(self, traj: Trajectory | tuple) -> int:
        tokens = traj.tokens if isinstance(traj, Trajectory) else tuple(traj)
        return self._index[tokens]

    @cached_property
    def inverse_lengths(self) -> np.ndarray:
        return 1.0 / self.lengths

    def step_logprobs(self, params: PolicyParams) -> np.ndarray:
        """(N, horizon) per-step log-probabilities, zero on padding."""
        return np.where(self.mask, params.log_probs[self.step_state, self.step_token], 0.0)

    def logprobs(self, params: PolicyParams) -> np.ndarray:
        return self.step_logprobs(params).sum(axis=1)

    def probabilities(self, params: PolicyParams) -> np.ndarray:
        return np.exp(self.logprobs(params))

    def rewards(self, spec: RewardSpec) -> np.ndarray:
        if spec not in self._reward_cache:
            vals = np.array([reward(spec, t) for t in self.trajectories])
            vals.setflags(write=False)
            self._reward_cache[spec] = vals
        return self._reward_cache[spec]

    def accumulate_scores(self, params: PolicyParams, weights) -> np.ndarray:
        """Return sum_j weights[j] * grad log P_theta(traj_j) as a flat vector."""
        weights = np.asarray(weights, dtype=np.float64)
        w = np.broadcast_to(weights[:, None], self.mask.shape)[self.mask]
        states = self.step_state[self.mask]
        tokens = self.step_token[self.mask]
        out = np.zeros_like(params.logits)
        np.add.at(out, (states, tokens), w)
        row = np.zeros(params.space.n_states)
        np.add.at(row, states, w)
        out -= row[:, None] * params.probs
        return out.reshape(-1)

    def state_visitation(self, params: PolicyParams) -> np.ndarray:
        """Probability that each non-terminal state is visited."""
        p = self.probabilities(params)
        d = np.zeros(params.space.n_states)
        np.add.at(d, self.step_state[self.mask], np.broadcast_to(p[:, None], self.mask.shape)[self.mask])
        return d


def enumerate_trajectories(
    space: StateSpace, prompt: State | None = None, budget: int = DEFAULT_ENUMERATION_BUDGET
) -> TrajectorySpace:
    """List every terminal sequence reachable from ``prompt`` exactly once."""
    prompt = space.root() if prompt is None else prompt
    if prompt.tokens:
        raise DomainError("enumeration starts from a bare prompt")
    n = trajectory_count(space.vocab, space.horizon)
    if n > budget:
        raise ResourceError(
            f"enumeration needs {n} trajectories, above the budget of {budget} "
            f"(V={space.vocab.size}, horizon={space.horizon})"
        )
    out: list[Trajectory] = []

    def walk(sid, toks, ids):
        for a in range(space.vocab.size):
            nxt = int(space.next_state[sid, a])
            if nxt < 0:
                out.append(Trajectory(prompt, toks + (a,), ids + (sid,), None, True))
            else:
                walk(nxt, toks + (a,), ids + (sid,))

    walk(space.index(prompt), (), ())
    return TrajectorySpace(space, prompt, out)


@dataclass(eq=False)
class Task:
    """A prompt, its state space and reward: everything an experiment needs."""

    vocab: Vocab
    horizon: int
    reward_spec: RewardSpec
    prompt_id: int = 0
    budget: int = DEFAULT_ENUMERATION_BUDGET

    def __post_init__(self):
        self.space = StateSpace(self.vocab, self.horizon, n_prompts=self.prompt_id + 1)
        self.prompt = self.space.root(self.prompt_id)

    @cached_property
    def trajectories(self) -> TrajectorySpace:
        return enumerate_trajectories(self.space, self.prompt, self.budget)

    @cached_property
    def rewards(self) -> np.ndarray:
        return self.trajectories.rewards(self.reward_spec)

    @property
    def optimal_return(self) -> float:
        """J* attained by a deterministic policy on the best trajectory."""
        return float(self.rewards.max())
