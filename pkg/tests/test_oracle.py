import numpy as np
import pytest

from grpolab.errors import DomainError
from grpolab.groups import group_advantages, sample_group_indices
from grpolab.objectives import EstimatorSpec
from grpolab.oracle import (
    estimator_bias_study,
    exact_J_and_grad,
    max_z,
    random_pairs,
    smoothness_probe,
    task_gradients,
    trajectory_kl,
)
from grpolab.policy import PolicyParams, ReferencePolicy, kl_to_ref

from conftest import central_difference, random_params, rel_error


class TestExactGradient:
    def test_matches_finite_difference(self, table_task, rng):
        space, spec = table_task.trajectories, table_task.reward_spec
        for _ in range(5):
            theta = random_params(table_task, rng)
            ex = exact_J_and_grad(theta, space, spec)
            fd = central_difference(lambda x: exact_J_and_grad(theta.with_flat(x), space, spec).J, theta.flat)
            assert rel_error(ex.grad_J, fd) < 1e-6

    def test_kl_objective_matches_finite_difference(self, table_task, rng):
        space, spec = table_task.trajectories, table_task.reward_spec
        ref = ReferencePolicy(random_params(table_task, rng))
        theta = random_params(table_task, rng)
        ex = exact_J_and_grad(theta, space, spec, 0.3, ref)
        fd = central_difference(lambda x: exact_J_and_grad(theta.with_flat(x), space, spec, 0.3, ref).J_kl, theta.flat)
        assert rel_error(ex.grad_J_kl, fd) < 1e-6

    def test_kl_is_visitation_weighted(self, table_task, rng):
        ref = ReferencePolicy(random_params(table_task, rng))
        theta = random_params(table_task, rng)
        space = table_task.trajectories
        d = space.state_visitation(theta)
        per_state = np.array([kl_to_ref(theta, ref, s) for s in table_task.space.states])
        ex = exact_J_and_grad(theta, space, table_task.reward_spec, 0.1, ref)
        assert ex.kl == pytest.approx(d @ per_state, rel=1e-12)
        assert ex.kl == pytest.approx(space.probabilities(theta) @ trajectory_kl(theta, ref, space), rel=1e-12)

    def test_mc_return_agrees(self, table_task, rng):
        theta = random_params(table_task, rng)
        space = table_task.trajectories
        p = space.probabilities(theta)
        idx = sample_group_indices(p, 50_000, 1, rng)[:, 0]
        r = table_task.rewards[idx]
        J = task_gradients(theta, table_task).J
        assert abs(r.mean() - J) < 4 * r.std() / np.sqrt(len(r))

    def test_beta_needs_reference(self, table_task):
        theta = PolicyParams.zeros(table_task.space)
        with pytest.raises(DomainError):
            exact_J_and_grad(theta, table_task.trajectories, table_task.reward_spec, 0.1)


class TestBiasStudy:
    def test_rejects_clipped_estimators(self, table_task, rng):
        theta = random_params(table_task, rng)
        with pytest.raises(DomainError):
            estimator_bias_study(theta, theta, EstimatorSpec.tic(), 10_000, rng, task=table_task)

    def test_rejects_small_samples(self, table_task, rng):
        theta = random_params(table_task, rng)
        with pytest.raises(DomainError):
            estimator_bias_study(theta, theta, EstimatorSpec.tic().unclipped(), 500, rng, task=table_task)

    def test_report_fields(self, table_task, rng):
        old = random_params(table_task, rng)
        theta = old.with_flat(old.flat + 0.3 * rng.standard_normal(old.dim))
        st = estimator_bias_study(
            theta, old, EstimatorSpec.ablation(), 10_000, rng, task=table_task, stats_samples=5000
        )
        assert st.mc_mean.shape == (table_task.space.dim,)
        assert st.samples == 10_000 and st.group_size == 8
        assert np.isfinite(st.z_current) and np.isfinite(st.z_old)

    def test_max_z(self):
        assert max_z(np.array([1.0, 2.0]), np.array([1.0, 1.0])) == 2.0
        assert max_z(np.array([0.0, 1.0]), np.array([0.0, 1.0])) == 1.0
        assert max_z(np.array([0.5, 1.0]), np.array([0.0, 1.0])) == float("inf")


class TestSmoothness:
    def test_softmax_score_lipschitz_bound(self, table_task, rng):
        pairs = random_pairs(table_task.space, 30, 3.0, rng)
        ref = ReferencePolicy(PolicyParams.zeros(table_task.space))
        rep = smoothness_probe(pairs, table_task.space.states, ref)
        assert rep.n_pairs == 30 and rep.n_skipped == 0
        assert 0 < rep.score_lipschitz <= 0.5 + 1e-12
        assert np.isfinite(rep.kl_lipschitz)

    def test_identical_pairs_skipped(self, table_task, rng):
        p = random_params(table_task, rng)
        rep = smoothness_probe([(p, p)], table_task.space.states, ReferencePolicy(p))
        assert rep.n_skipped == 1 and rep.n_pairs == 0
