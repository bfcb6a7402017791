"""
Exact objective and gradient by enumeration
===========================================

With three tokens (token 0 is end-of-sequence) and a horizon of three, the
policy can emit only 15 distinct sequences. Listing them all gives J(theta)
and its gradient exactly, which every Monte Carlo check in the package
compares against.
"""

import numpy as np

from grpolab.env import RewardSpec, Task
from grpolab.oracle import task_gradients
from grpolab.policy import PolicyParams, Vocab

task = Task(Vocab(3), 3, RewardSpec("target-sequence", target=(1, 2, 0)))
space = task.trajectories
print(f"{task.space.n_states} decision states, {task.space.dim} parameters, {len(space)} trajectories")

# uniform policy: every state gets equal logits
theta = PolicyParams.zeros(task.space)
probs = space.probabilities(theta)
for traj, p, r in zip(space.trajectories, probs, task.rewards):
    print(f"  {traj.tokens!s:12} P={p:.4f} reward={r:.0f}")
print("sum of probabilities:", probs.sum())

ex = task_gradients(theta, task)
print(f"J(uniform) = {ex.J:.4f}  (the target has probability 1/27)")

# compare with a central finite difference along a random direction
rng = np.random.default_rng(0)
theta = PolicyParams.random(task.space, rng)
d = rng.standard_normal(theta.dim)
h = 1e-5
fd = (task_gradients(theta.with_flat(theta.flat + h * d), task).J - task_gradients(theta.with_flat(theta.flat - h * d), task).J) / (2 * h)
print(f"directional derivative: analytic {task_gradients(theta, task).grad_J @ d:.10f}  finite difference {fd:.10f}")
