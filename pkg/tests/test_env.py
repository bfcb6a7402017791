import numpy as np
import pytest

from grpolab.env import RewardSpec, Task, enumerate_trajectories, reward, reward_tokens
from grpolab.errors import DomainError, ResourceError
from grpolab.policy import PolicyParams, StateSpace, Trajectory, Vocab


class TestRewards:
    def test_target_sequence(self):
        spec = RewardSpec("target-sequence", target=(1, 2, 0))
        assert reward_tokens(spec, (1, 2, 0)) == 1.0
        assert reward_tokens(spec, (1, 2, 1)) == 0.0

    def test_substring_count_is_capped(self):
        spec = RewardSpec("substring-count", bound=2.0, pattern=(1, 1), cap=2)
        assert reward_tokens(spec, (2, 2, 0)) == 0.0
        assert reward_tokens(spec, (1, 1, 0)) == 1.0
        assert reward_tokens(spec, (1, 1, 1, 1)) == 2.0

    def test_random_table_is_deterministic_and_bounded(self):
        spec = RewardSpec("random-table", bound=0.5, seed=11)
        vals = [reward_tokens(spec, (a, b, 0)) for a in (1, 2) for b in (1, 2)]
        assert vals == [reward_tokens(spec, (a, b, 0)) for a in (1, 2) for b in (1, 2)]
        assert all(abs(v) <= 0.5 for v in vals)
        assert len(set(vals)) == 4

    def test_invalid_specs(self):
        with pytest.raises(DomainError):
            RewardSpec("nope")
        with pytest.raises(DomainError):
            RewardSpec("target-sequence")
        with pytest.raises(DomainError):
            RewardSpec("target-sequence", bound=0.5, target=(1,))
        with pytest.raises(DomainError):
            RewardSpec("substring-count", pattern=())

    def test_non_terminal_trajectory(self, target_task):
        t = Trajectory.from_tokens(target_task.space, target_task.prompt, (1,))
        with pytest.raises(DomainError):
            reward(target_task.reward_spec, t)


class TestEnumeration:
    def test_count_and_uniqueness(self, target_task):
        trajs = target_task.trajectories
        assert len(trajs) == 15
        assert len({t.tokens for t in trajs.trajectories}) == 15
        assert all(t.terminal for t in trajs.trajectories)

    def test_lexicographic_order(self, target_task):
        tokens = [t.tokens for t in target_task.trajectories.trajectories]
        assert tokens == sorted(tokens)

    def test_probabilities_sum_to_one(self, target_task, rng):
        for scale in (0.1, 1.0, 5.0):
            p = PolicyParams.random(target_task.space, rng, scale)
            assert target_task.trajectories.probabilities(p).sum() == pytest.approx(1.0, abs=1e-12)

    def test_budget(self):
        space = StateSpace(Vocab(5), 8)
        with pytest.raises(ResourceError, match="budget"):
            enumerate_trajectories(space, budget=1000)

    def test_state_visitation(self, target_task, rng):
        p = PolicyParams.random(target_task.space, rng)
        d = target_task.trajectories.state_visitation(p)
        assert d[0] == pytest.approx(1.0)
        assert np.all(d <= 1.0 + 1e-12)

    def test_optimal_return(self, target_task, table_task):
        assert target_task.optimal_return == 1.0
        assert table_task.optimal_return == table_task.rewards.max()

    def test_second_prompt(self):
        task = Task(Vocab(3), 2, RewardSpec("random-table", seed=1), prompt_id=1)
        assert task.prompt.prompt_id == 1
        assert len(task.trajectories) == 1 + 2 * 3
