"""Tabular softmax token policy over prompt-rooted token sequences.

Each reachable non-terminal state (a prompt plus a prefix of non-eos tokens
shorter than the horizon) owns one row of ``V`` logits. Parameters flatten
state-major, token-minor, and every gradient in the package uses that layout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Vocab:
    size: int
    eos: int = 0

    def __post_init__(self):
        if int(self.size) < 2:
            raise DomainError(f"vocab size must be >= 2, got {self.size}")
        if not 0 <= int(self.eos) < int(self.size):
            raise DomainError(f"eos must lie in [0, {self.size}), got {self.eos}")

    @property
    def content_tokens(self) -> tuple[int, ...]:
        return tuple(a for a in range(self.size) if a != self.eos)


@dataclass(frozen=True)
class State:
    """A prompt index plus the tokens generated so far."""

    prompt_id: int = 0
    tokens: tuple[int, ...] = ()

    def extend(self, token: int) -> "State":
        return State(self.prompt_id, self.tokens + (int(token),))


class StateSpace:
    """Enumerates and indexes the reachable non-terminal states.

    A state is non-terminal when it contains no eos and has fewer than
    ``horizon`` tokens, so there are ``n_prompts * sum_{t<horizon} (V-1)**t``
    of them.
    """

    def __init__(self, vocab: Vocab, horizon: int, n_prompts: int = 1):
        if int(horizon) < 1:
            raise DomainError(f"horizon must be >= 1, got {horizon}")
        if int(n_prompts) < 1:
            raise DomainError(f"n_prompts must be >= 1, got {n_prompts}")
        self.vocab = vocab
        self.horizon = int(horizon)
        self.n_prompts = int(n_prompts)

        prefixes: list[tuple[int, ...]] = []
        for length in range(self.horizon):
            prefixes.extend(itertools.product(vocab.content_tokens, repeat=length))
        self.states = [State(p, pre) for p in range(self.n_prompts) for pre in prefixes]
        self._index = {s: i for i, s in enumerate(self.states)}

        # next_state[i, a] is the successor index, or -1 when token a terminates.
        nxt = np.full((len(self.states), vocab.size), -1, dtype=np.int64)
        for i, s in enumerate(self.states):
            for a in vocab.content_tokens:
                nxt[i, a] = self._index.get(s.extend(a), -1)
        nxt.setflags(write=False)
        self.next_state = nxt

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.n_states * self.vocab.size

    def __eq__(self, other):
        return (
            isinstance(other, StateSpace)
            and self.vocab == other.vocab
            and self.horizon == other.horizon
            and self.n_prompts == other.n_prompts
        )

    def __hash__(self):
        return hash((self.vocab, self.horizon, self.n_prompts))

    def __repr__(self):
        return f"StateSpace(V={self.vocab.size}, eos={self.vocab.eos}, horizon={self.horizon}, prompts={self.n_prompts})"

    def index(self, state: State) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise DomainError(f"{state} is terminal or not in this state space") from None

    def is_terminal_sequence(self, tokens) -> bool:
        return len(tokens) > 0 and (tokens[-1] == self.vocab.eos or len(tokens) == self.horizon)

    def root(self, prompt_id: int = 0) -> State:
        state = State(int(prompt_id), ())
        self.index(state)
        return state


@dataclass(frozen=True, eq=False)
class PolicyParams:
    space: StateSpace
    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64)
        shape = (self.space.n_states, self.space.vocab.size)
        if arr.shape != shape:
            if arr.size == shape[0] * shape[1]:
                arr = arr.reshape(shape)
            else:
                raise DomainError(f"logits shape {arr.shape} does not match {shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @classmethod
    def zeros(cls, space: StateSpace) -> "PolicyParams":
        return cls(space, np.zeros((space.n_states, space.vocab.size)))

    @classmethod
    def random(cls, space: StateSpace, rng: np.random.Generator, scale: float = 1.0) -> "PolicyParams":
        return cls(space, scale * rng.standard_normal((space.n_states, space.vocab.size)))

    @property
    def horizon(self) -> int:
        return self.space.horizon

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def flat(self) -> np.ndarray:
        return self.logits.reshape(-1)

    def with_flat(self, vector) -> "PolicyParams":
        return PolicyParams(self.space, np.asarray(vector, dtype=np.float64).reshape(self.logits.shape))

    def __add__(self, other):
        if isinstance(other, PolicyParams):
            other = other.logits
        return PolicyParams(self.space, self.logits + np.asarray(other).reshape(self.logits.shape))

    @cached_property
    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        out.setflags(write=False)
        return out

    @cached_property
    def probs(self) -> np.ndarray:
        out = np.exp(self.log_probs)
        out.setflags(write=False)
        return out

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.probs, axis=1)


@dataclass(frozen=True, eq=False)
class ReferencePolicy:
    """Frozen reference policy for the KL penalty."""

    params: PolicyParams


@dataclass(frozen=True)
class Trajectory:
    """A generated token sequence with the state index visited before each token.

    ``sampling_logprobs`` holds the per-step log-probabilities under the policy
    that produced it, or ``None`` for trajectories built by enumeration.
    """

    prompt: State
    tokens: tuple[int, ...]
    state_ids: tuple[int, ...]
    sampling_logprobs: tuple[float, ...] | None = None
    terminal: bool = True

    @property
    def length(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, space: StateSpace, prompt: State, tokens, logprobs=None) -> "Trajectory":
        tokens = tuple(int(a) for a in tokens)
        if not tokens:
            raise DomainError("a trajectory needs at least one token")
        if len(tokens) > space.horizon:
            raise DomainError(f"trajectory length {len(tokens)} exceeds horizon {space.horizon}")
        sid = space.index(State(prompt.prompt_id, prompt.tokens))
        ids = []
        for t, a in enumerate(tokens):
            if not 0 <= a < space.vocab.size:
                raise DomainError(f"token {a} outside vocabulary of size {space.vocab.size}")
            if sid < 0:
                raise DomainError(f"token at position {t} follows a terminal token")
            ids.append(sid)
            sid = int(space.next_state[sid, a])
        if logprobs is not None:
            logprobs = tuple(float(x) for x in logprobs)
            if len(logprobs) != len(tokens):
                raise DomainError("sampling_logprobs must have one entry per token")
        return cls(prompt, tokens, tuple(ids), logprobs, space.is_terminal_sequence(tokens))


def _row(params: PolicyParams, state: State) -> int:
    return params.space.index(state)


def token_probs(params: PolicyParams, state: State) -> np.ndarray:
    """Next-token distribution at a non-terminal state."""
    return params.probs[_row(params, state)].copy()


def _check_token(params: PolicyParams, token: int):
    if not 0 <= int(token) < params.space.vocab.size:
        raise DomainError(f"token {token} outside vocabulary of size {params.space.vocab.size}")


def score(params: PolicyParams, state: State, token: int) -> np.ndarray:
    """Gradient of log pi(token | state) with respect to the flat parameters."""
    _check_token(params, token)
    s = _row(params, state)
    out = np.zeros_like(params.logits)
    out[s] = -params.probs[s]
    out[s, int(token)] += 1.0
    return out.reshape(-1)


def _check_trajectory(params: PolicyParams, traj: Trajectory):
    space = params.space
    if traj.length == 0 or traj.length > space.horizon or len(traj.state_ids) != traj.length:
        raise DomainError("trajectory inconsistent with the policy's horizon")
    for sid, a in zip(traj.state_ids, traj.tokens):
        if not 0 <= sid < space.n_states or not 0 <= a < space.vocab.size:
            raise DomainError("trajectory inconsistent with the policy's state space")


def step_logprobs(params: PolicyParams, traj: Trajectory) -> np.ndarray:
    _check_trajectory(params, traj)
    return params.log_probs[np.asarray(traj.state_ids), np.asarray(traj.tokens)]


def trajectory_logprob(params: PolicyParams, traj: Trajectory) -> float:
    return float(np.sum(step_logprobs(params, traj)))


def trajectory_score(params: PolicyParams, traj: Trajectory) -> np.ndarray:
    """Gradient of the trajectory log-probability (sum of per-step scores)."""
    _check_trajectory(params, traj)
    out = np.zeros_like(params.logits)
    for sid, a in zip(traj.state_ids, traj.tokens):
        out[sid] -= params.probs[sid]
        out[sid, a] += 1.0
    return out.reshape(-1)


def sample_trajectory(params: PolicyParams, prompt: State, rng: np.random.Generator) -> Trajectory:
    """Autoregressive sampling until eos or the horizon."""
    space = params.space
    sid = space.index(prompt)
    cdf = params._cdf
    tokens, ids, lps = [], [], []
    while sid >= 0:
        row = cdf[sid]
        a = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        a = min(a, space.vocab.size - 1)
        tokens.append(a)
        ids.append(sid)
        lps.append(float(params.log_probs[sid, a]))
        sid = int(space.next_state[sid, a])
    return Trajectory(prompt, tuple(tokens), tuple(ids), tuple(lps), True)


def kl_to_ref(params: PolicyParams, ref: ReferencePolicy, state: State) -> float:
    """Exact KL(pi_theta(.|s) || pi_ref(.|s))."""
    s = _row(params, state)
    p = params.probs[s]
    return float(np.sum(p * (params.log_probs[s] - ref.params.log_probs[s])))


def kl_grad(params: PolicyParams, ref: ReferencePolicy, state: State) -> np.ndarray:
    s = _row(params, state)
    out = np.zeros_like(params.logits)
    out[s] = _kl_row_grad(params, ref, s)
    return out.reshape(-1)


def _kl_row_grad(params: PolicyParams, ref: ReferencePolicy, s: int) -> np.ndarray:
    p = params.probs[s]
    diff = params.log_probs[s] - ref.params.log_probs[s]
    return p * (diff - np.dot(p, diff))


def kl_k3(params: PolicyParams, ref: ReferencePolicy, state: State, token: int) -> float:
    """Single-sample KL estimate ``r - log r - 1`` with ``r = pi_ref(a)/pi_theta(a)``."""
    _check_token(params, token)
    s = _row(params, state)
    log_r = ref.params.log_probs[s, token] - params.log_probs[s, token]
    return float(np.exp(log_r) - log_r - 1.0)


def kl_k3_grad(params: PolicyParams, ref: ReferencePolicy, state: State, token: int) -> np.ndarray:
    _check_token(params, token)
    s = _row(params, state)
    log_r = ref.params.log_probs[s, token] - params.log_probs[s, token]
    return (1.0 - np.exp(log_r)) * score(params, state, token)
