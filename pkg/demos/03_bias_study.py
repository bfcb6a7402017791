"""
What does each estimator estimate?
==================================

For a fixed (theta, theta_old) pair we average 10^5 independent groups and
compare the mean with E[1/|s|] / E[sigma_G] times the exact gradient, at the
current and at the old parameters. The full estimators sit far from both
targets: dividing by the group's own standard deviation and by each
sequence's length correlates with the score, so neither factor averages out.
The "unbiased term" of each decomposition does land on its target, which
shows where the stale-versus-current distinction lives.
"""

import numpy as np

from grpolab.env import RewardSpec, Task
from grpolab.groups import group_population_stats
from grpolab.objectives import EstimatorSpec
from grpolab.oracle import estimator_bias_study
from grpolab.policy import PolicyParams, Vocab

task = Task(Vocab(3), 3, RewardSpec("target-sequence", target=(1, 2, 0)))
rng = np.random.default_rng(2)
old = PolicyParams.random(task.space, rng)
theta = old.with_flat(old.flat + 0.3 * rng.standard_normal(old.dim))
stats = group_population_stats(old, task.prompt, task.reward_spec, 8, 200_000, rng, space=task.trajectories)
print(f"mu_bar={stats.mu_bar:.4f} sigma_bar={stats.sigma_bar:.4f} E[1/|s|]={stats.t_inv:.4f}")

print(f"{'estimator':10} {'quantity':14} {'z vs theta':>11} {'z vs theta_old':>15}")
for name, spec in (
    ("grpo", EstimatorSpec.grpo().unclipped()),
    ("tic-grpo", EstimatorSpec.tic().unclipped()),
    ("ablation", EstimatorSpec.ablation()),
):
    for quantity in ("estimate", "unbiased-term") if name != "ablation" else ("estimate",):
        st = estimator_bias_study(theta, old, spec, 100_000, rng, task=task, stats=stats, quantity=quantity)
        print(f"{name:10} {quantity:14} {st.z_current:11.1f} {st.z_old:15.1f}")

# ratio of the estimator mean to the target along the target direction
st = estimator_bias_study(theta, old, EstimatorSpec.tic().unclipped(), 100_000, rng, task=task, stats=stats)
u = st.target_current / np.linalg.norm(st.target_current)
print(f"projection of the TIC mean onto the target: {st.mc_mean @ u / np.linalg.norm(st.target_current):.3f} of its length")
