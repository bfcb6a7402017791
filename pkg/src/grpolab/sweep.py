"""Grid sweeps of the post-transient stationarity statistic over (eta, K, |G|)."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import Task
from .errors import ConfigError
from .trainer import TrainConfig, run

TABLE_HEADER = ("algorithm", "eta", "K", "group_size", "mean", "std", "n_seeds")


@dataclass(frozen=True)
class SweepRow:
    algorithm: str
    eta: float
    K: int
    group_size: int
    mean: float
    std: float
    n_seeds: int
    values: tuple[float, ...] = field(default=(), compare=False)

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(self.n_seeds)


@dataclass(frozen=True)
class TrendCheck:
    """One directional comparison: ``reduced`` should not exceed ``base`` beyond noise."""

    kind: str
    algorithm: str
    base: SweepRow
    reduced: SweepRow
    threshold: float
    passed: bool


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def lookup(self, algorithm, eta, K, group_size) -> SweepRow | None:
        for r in self.rows:
            if (r.algorithm, r.eta, r.K, r.group_size) == (algorithm, eta, K, group_size):
                return r
        return None

    def write_tsv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(TABLE_HEADER)
            for r in self.rows:
                w.writerow([r.algorithm, repr(r.eta), r.K, r.group_size, repr(r.mean), repr(r.std), r.n_seeds])

    @classmethod
    def read_tsv(cls, path) -> "SweepTable":
        with Path(path).open() as fh:
            rd = csv.reader(fh, delimiter="\t")
            header = tuple(next(rd))
            if header != TABLE_HEADER:
                raise ValueError(f"unexpected sweep header {header}")
            rows = [
                SweepRow(a, float(e), int(k), int(g), float(m), float(s), int(n))
                for a, e, k, g, m, s, n in rd
            ]
        return cls(rows)


def convergence_sweep(
    base: TrainConfig,
    task: Task,
    grid: dict,
    seeds,
    algorithms=("grpo", "tic-grpo"),
    burn_in: float = 0.5,
    progress=None,
) -> SweepTable:
    """Run every (algorithm, eta, K, |G|, seed) cell and summarize across seeds.

    ``grid`` maps ``eta``, ``K`` and ``group_size`` to lists of values; each
    cell's statistic is the mean over seeds of the post-burn-in average of
    ``||grad J(theta_{n,0})||^2``.
    """
    seeds = list(seeds)
    axes = {k: list(grid.get(k, [getattr(base, k)])) for k in ("eta", "K", "group_size")}
    if not seeds:
        raise ConfigError("at least one seed is required", "sweep.seeds")
    for k, vals in axes.items():
        if not vals:
            raise ConfigError("grid axis is empty", f"sweep.{k}")
    if not algorithms:
        raise ConfigError("at least one algorithm is required", "sweep.algorithms")

    rows = []
    for alg, eta, K, g in itertools.product(algorithms, axes["eta"], axes["K"], axes["group_size"]):
        values = []
        for s in seeds:
            cfg = replace(base, algorithm=alg, eta=eta, K=K, group_size=g, seed=s, batch_groups=None)
            values.append(run(cfg, task).stationarity(burn_in))
            if progress:
                progress(alg, eta, K, g, s)
        v = np.array(values)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        rows.append(SweepRow(alg, float(eta), int(K), int(g), float(v.mean()), std, len(v), tuple(values)))
    return SweepTable(rows)


def trend_checks(table: SweepTable, noise_sigma: float = 3.0) -> list[TrendCheck]:
    """Adjacent-cell comparisons: a smaller eta, or a larger |G|, must not raise the
    statistic by more than ``noise_sigma`` combined standard errors."""
    etas = sorted({r.eta for r in table.rows})
    sizes = sorted({r.group_size for r in table.rows})
    checks = []
    for r in table.rows:
        pairs = []
        i = etas.index(r.eta)
        if i > 0:
            pairs.append(("eta-reduced", table.lookup(r.algorithm, etas[i - 1], r.K, r.group_size)))
        j = sizes.index(r.group_size)
        if j + 1 < len(sizes):
            pairs.append(("group-increased", table.lookup(r.algorithm, r.eta, r.K, sizes[j + 1])))
        for kind, other in pairs:
            if other is None:
                continue
            thr = r.mean + noise_sigma * float(np.hypot(r.stderr, other.stderr))
            checks.append(TrendCheck(kind, r.algorithm, r, other, thr, other.mean <= thr))
    return checks
