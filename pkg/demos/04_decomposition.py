"""
Splitting the update into an unbiased part and error terms
==========================================================

Each group's Gradient Term is written as a scaled unbiased estimate plus
named errors. The pieces add back up to machine precision; the sampling
errors shrink as the group grows.
"""

import numpy as np

from grpolab.env import RewardSpec, Task
from grpolab.groups import group_population_stats, sample_group
from grpolab.mc import BatchedEstimator, mc_group_moments
from grpolab.objectives import EstimatorSpec, decompose_grpo, decompose_tic
from grpolab.policy import PolicyParams, Vocab

task = Task(Vocab(3), 3, RewardSpec("random-table", seed=5))
rng = np.random.default_rng(4)
old = PolicyParams.random(task.space, rng)
theta = old.with_flat(old.flat + 0.5 * rng.standard_normal(old.dim))
stats = group_population_stats(old, task.prompt, task.reward_spec, 8, 50_000, rng, space=task.trajectories)
group = sample_group(old, task.prompt, 8, task.reward_spec, rng)

for name, fn, spec in (("grpo", decompose_grpo, EstimatorSpec.grpo()), ("tic-grpo", decompose_tic, EstimatorSpec.tic())):
    rep = fn(theta, old, group, spec, stats)
    print(name, "residual", rep.residual)
    for term, norm in rep.norms().items():
        print(f"   {term:22} {norm:.4f}")

# mean Sampling Error 1 over many groups, as a function of |G|
space = task.trajectories
be = BatchedEstimator(space, theta, old, EstimatorSpec.tic())
probs = space.probabilities(old)
for g in (2, 4, 8, 16, 32):
    st = group_population_stats(old, task.prompt, task.reward_spec, g, 20_000, rng, space=space)
    mean, _ = mc_group_moments(
        lambda idx, adv, r: be.decomposition(idx, adv, r, st)["sampling_error_1"], probs, task.rewards, 10_000, g, rng, 1e-4
    )
    print(f"|G|={g:2}  ||E[sampling_error_1]|| = {np.linalg.norm(mean):.4f}")
