"""
Sweeping step size, inner iterations and group size
===================================================

The stationarity statistic is the post-burn-in average of
||grad J(theta_{n,0})||^2. This small version of the sweep uses 5 seeds and
100 outer steps; the full grid is in configs/sweep.json.

At a finite horizon the statistic mostly measures how far training has
progressed: a smaller step size leaves the policy in the steep early region
for longer, so its average squared gradient is larger, not smaller. The
"violated" lines below are that effect, not noise.
"""

from grpolab.env import RewardSpec, Task
from grpolab.policy import Vocab
from grpolab.sweep import convergence_sweep, trend_checks
from grpolab.trainer import TrainConfig

task = Task(Vocab(3), 3, RewardSpec("random-table", seed=5))
grid = {"eta": [0.01, 0.05], "K": [2], "group_size": [4, 16]}
table = convergence_sweep(TrainConfig(N=100), task, grid, range(5), ("tic-grpo",))
for r in table.rows:
    print(f"{r.algorithm} eta={r.eta} K={r.K} |G|={r.group_size:2}  statistic {r.mean:.3e} +- {r.stderr:.1e}")
for c in trend_checks(table):
    print(f"{c.kind:16} from eta={c.base.eta},|G|={c.base.group_size}: {c.base.mean:.2e} -> {c.reduced.mean:.2e}  {'ok' if c.passed else 'violated'}")
