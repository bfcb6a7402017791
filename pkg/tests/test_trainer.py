import numpy as np
import pytest

from grpolab.errors import ConfigError, NumericAbort
from grpolab.objectives import ClipConfig
from grpolab.policy import PolicyParams
from grpolab.trainer import SCHEMA_VERSION, TrainConfig, TrainState, refresh_old, run

from conftest import random_params


class TestConfig:
    @pytest.mark.parametrize(
        "kw,field",
        [
            ({"K": 0}, "K"),
            ({"N": 0}, "N"),
            ({"eta": -1.0}, "eta"),
            ({"group_size": 1}, "group_size"),
            ({"algorithm": "ppo"}, "algorithm"),
            ({"reuse": "x"}, "reuse"),
            ({"batch_groups": 3}, "batch_groups"),
            ({"length_norm": "sum"}, "length_norm"),
        ],
    )
    def test_validation_names_field(self, kw, field):
        with pytest.raises(ConfigError) as err:
            TrainConfig(**kw)
        assert err.value.field == field
        assert field in str(err.value)

    def test_batch_defaults_to_partition(self):
        cfg = TrainConfig(K=3, minibatch_groups=2)
        assert cfg.batch_groups == 6

    def test_algorithm_clip_defaults(self):
        assert TrainConfig(algorithm="grpo").estimator_spec().clip.mode == "two-sided-min"
        assert TrainConfig(algorithm="tic-grpo").estimator_spec().clip.mode == "upper-only"
        assert TrainConfig(algorithm="ablation").estimator_spec().ratio_mode == "none"


class TestRun:
    def test_deterministic_replay(self, target_task):
        cfg = TrainConfig(algorithm="grpo", N=15, seed=9)
        a, b = run(cfg, target_task), run(cfg, target_task)
        assert a.records() == b.records()
        np.testing.assert_array_equal(a.final_params.logits, b.final_params.logits)

    def test_records_schema(self, target_task):
        log = run(TrainConfig(N=3, K=2), target_task)
        recs = log.records()
        assert len(recs) == 3 * 3
        assert all(r["schema_version"] == SCHEMA_VERSION for r in recs)
        assert [r["kind"] for r in recs[:3]] == ["outer", "inner", "inner"]
        assert all("wall_time" not in r for r in recs)
        assert len(log.timings) == 6

    def test_zero_step_size(self, table_task, rng):
        init = random_params(table_task, rng)
        log = run(TrainConfig(eta=0.0, N=5), table_task, policy_init=init)
        np.testing.assert_array_equal(log.final_params.logits, init.logits)

    def test_single_inner_step_grpo_equals_tic(self, table_task, rng):
        init = random_params(table_task, rng)
        off = ClipConfig.disabled()
        a = run(TrainConfig(algorithm="grpo", K=1, N=20, clip=off, seed=4), table_task, policy_init=init)
        b = run(TrainConfig(algorithm="tic-grpo", K=1, N=20, clip=off, seed=4), table_task, policy_init=init)
        c = run(TrainConfig(algorithm="ablation", K=1, N=20, seed=4), table_task, policy_init=init)
        np.testing.assert_allclose(a.final_params.logits, b.final_params.logits, atol=1e-12)
        np.testing.assert_allclose(a.final_params.logits, c.final_params.logits, atol=1e-12)

    def test_replacement_reuse(self, target_task):
        log = run(TrainConfig(N=4, K=3, reuse="replacement", batch_groups=5), target_task)
        assert len(log.inner) == 12

    def test_numeric_abort(self, table_task):
        with pytest.raises(NumericAbort) as err:
            run(TrainConfig(eta=float("inf"), N=3), table_task)
        log = err.value.log
        assert log.aborted
        assert log.inner[-1]["kind"] == "abort"
        assert all(v is None for k, v in log.inner[-1].items() if k not in ("schema_version", "kind", "n", "k"))
        assert np.all(np.isfinite(log.final_params.logits))

    def test_learns_target(self, target_task):
        log = run(TrainConfig(N=150, seed=1), target_task)
        assert log.final_J > log.outer[0]["J"]

    def test_stationarity_window(self, target_task):
        log = run(TrainConfig(N=10), target_task)
        g = log.grad_norm_sq()
        assert log.stationarity(0.5) == pytest.approx(g[5:].mean())
        assert log.stationarity(0.0) == pytest.approx(g.mean())

    def test_kl_penalty_runs(self, table_task):
        log = run(TrainConfig(N=5, beta=0.1, kl_estimator="k3"), table_task)
        assert all(np.isfinite(r["objective"]) for r in log.outer)


def test_refresh_old_drops_groups(target_task):
    p = PolicyParams.zeros(target_task.space)
    q = p.with_flat(p.flat + 1.0)
    s = refresh_old(TrainState(q, p, ("stale",)))
    assert s.theta_old is q and s.groups == ()
