"""
Token ratios, trajectory ratios and clipping
============================================

GRPO weights each token's score by its own ratio pi_theta / pi_old and clips
on both sides; TIC-GRPO uses one ratio per trajectory (the product of the
token ratios) and clips only from above. The ablation drops ratios entirely
and uses the old policy's score.
"""

import numpy as np

from grpolab.env import RewardSpec, Task
from grpolab.groups import sample_group
from grpolab.objectives import (
    ClipConfig,
    EstimatorSpec,
    ablation_gradient,
    clip,
    clip_bar,
    grpo_gradient,
    tic_gradient,
    token_ratios,
    traj_ratio,
)
from grpolab.policy import PolicyParams, Vocab

cfg = ClipConfig(eps_low=0.2, eps_high=0.28)
for x in (0.5, 1.0, 1.5):
    print(f"clip({x}) = {clip(x, cfg):.2f}   clip_bar({x}) = {clip_bar(x, cfg):.2f}")

task = Task(Vocab(3), 3, RewardSpec("random-table", seed=5))
rng = np.random.default_rng(1)
old = PolicyParams.random(task.space, rng)
group = sample_group(old, task.prompt, 8, task.reward_spec, rng)
print("rewards   ", np.round(group.rewards, 3))
print("advantages", np.round(group.advantages, 3))

# at theta == theta_old every ratio is 1 and the three estimators agree
g = grpo_gradient(old, old, group, EstimatorSpec.grpo())
t = tic_gradient(old, old, group, EstimatorSpec.tic())
a = ablation_gradient(old, group)
print("max gap at theta_old:", np.max(np.abs(g.vector - a.vector)), np.max(np.abs(t.vector - a.vector)))

# after a step away from theta_old they differ
theta = old.with_flat(old.flat + 0.4 * rng.standard_normal(old.dim))
traj = group.trajectories[0]
print("token ratios of the first trajectory:", np.round(token_ratios(theta, old, traj), 3))
print("its trajectory ratio:", round(traj_ratio(theta, old, traj), 3))
for name, est in (
    ("grpo", grpo_gradient(theta, old, group, EstimatorSpec.grpo())),
    ("tic-grpo", tic_gradient(theta, old, group, EstimatorSpec.tic())),
    ("ablation", ablation_gradient(old, group)),
):
    print(f"{name:9} |grad|={np.linalg.norm(est.vector):.4f} clipped fraction={est.clip_fraction:.2f} max ratio={est.max_ratio:.3f}")
