import numpy as np
import pytest

from grpolab.errors import ResourceError
from grpolab.mc import BatchedEstimator, RunningMoments, exact_group_expectation, mc_group_moments, multiset_count
from grpolab.objectives import EstimatorSpec
from grpolab.policy import PolicyParams

from conftest import random_params


class TestRunningMoments:
    def test_matches_numpy(self, rng):
        x = rng.standard_normal((1000, 3))
        mom = RunningMoments()
        for chunk in np.array_split(x, 7):
            mom.update(chunk)
        np.testing.assert_allclose(mom.mean, x.mean(axis=0))
        np.testing.assert_allclose(mom.stderr, x.std(axis=0, ddof=1) / np.sqrt(1000))


class TestExactExpectation:
    def test_weights_sum_to_one(self, table_task, rng):
        p = table_task.trajectories.probabilities(random_params(table_task, rng))
        r = table_task.rewards
        mean, weight = exact_group_expectation(lambda idx, adv, rr: rr.mean(axis=1), p, r, 3, 1e-4)
        assert weight == pytest.approx(1.0, abs=1e-12)
        assert mean == pytest.approx(p @ r, abs=1e-12)

    def test_multiset_count(self):
        assert multiset_count(15, 3) == 680

    def test_budget(self, table_task):
        p = np.full(15, 1 / 15)
        with pytest.raises(ResourceError):
            exact_group_expectation(lambda i, a, r: r, p, table_task.rewards, 8, 1e-4, budget=1000)

    def test_mc_agrees_with_exact(self, tiny_task, rng):
        old = random_params(tiny_task, rng)
        theta = old.with_flat(old.flat + 0.4 * rng.standard_normal(old.dim))
        space = tiny_task.trajectories
        be = BatchedEstimator(space, theta, old, EstimatorSpec.tic().unclipped())
        p, r = space.probabilities(old), tiny_task.rewards
        fn = lambda idx, adv, rr: be.estimates(idx, adv)  # noqa: E731
        exact, _ = exact_group_expectation(fn, p, r, 4, 1e-4)
        mean, se = mc_group_moments(fn, p, r, 100_000, 4, rng, 1e-4)
        live = se > 0
        assert np.all(np.abs(mean - exact)[live] < 5 * se[live])
        np.testing.assert_allclose(mean[~live], exact[~live], atol=1e-12)

    def test_dict_outputs(self, tiny_task, rng):
        p, r = np.full(3, 1 / 3), tiny_task.rewards
        out = mc_group_moments(lambda idx, adv, rr: {"a": rr, "b": adv}, p, r, 2000, 4, rng, 1e-4)
        assert set(out) == {"a", "b"}
        np.testing.assert_allclose(out["b"][0].sum(), 0.0, atol=1e-12)


def test_dense_budget(table_task, monkeypatch):
    monkeypatch.setattr("grpolab.mc.DENSE_BUDGET", 10)
    p = PolicyParams.zeros(table_task.space)
    with pytest.raises(ResourceError):
        BatchedEstimator(table_task.trajectories, p, p, EstimatorSpec.tic())
