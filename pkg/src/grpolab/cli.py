"""Command-line entry point: ``grpolab train|bias-study|decompose|sweep --config PATH``.

Each command writes into one run directory: ``--out`` if given, otherwise
``$GRPOLAB_OUTPUT_ROOT`` (or the config's ``output_dir``, or ``./runs``) joined
with ``<name>-<command>-seed<seed>``. Exit codes: 0 ok, 2 configuration error,
3 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, DegenerateTaskError, NumericAbort, ResourceError
from .groups import group_population_stats, sample_group
from .objectives import EstimatorSpec, decompose_grpo, decompose_tic, estimate_gradient
from .oracle import estimator_bias_study
from .policy import PolicyParams
from .sweep import convergence_sweep, trend_checks
from .trainer import SCHEMA_VERSION, run

OUTPUT_ROOT_ENV = "GRPOLAB_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
U64_MAX = 2**64 - 1


def resolve_run_dir(cfg: RunConfig, command: str, out: str | None) -> Path:
    if out:
        return Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir or "runs"
    return Path(root) / f"{cfg.name}-{command}-seed{cfg.seed}"


def initial_params(cfg: RunConfig, space) -> PolicyParams:
    if cfg.train.init == "zeros":
        return PolicyParams.zeros(space)
    return PolicyParams.random(space, np.random.default_rng([cfg.seed, 1]), cfg.train.init_scale)


def _jsonl(path: Path, records):
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _tsv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _emit(summary: dict):
    print(json.dumps(summary, sort_keys=True))


def cmd_train(cfg: RunConfig, run_dir: Path) -> int:
    task = cfg.build_task()
    tcfg = cfg.train_config()
    theta0 = initial_params(cfg, task.space)
    J_star = task.optimal_return
    try:
        log = run(tcfg, task, policy_init=theta0)
        code = EXIT_OK
    except NumericAbort as exc:
        log, code = exc.log, EXIT_NUMERIC
    _jsonl(run_dir / "metrics.jsonl", log.records())
    _jsonl(run_dir / "timing.jsonl", log.timings)
    params_name = "last_finite_params.npy" if log.aborted else "final_params.npy"
    np.save(run_dir / params_name, log.final_params.logits)
    g = [v for v in log.grad_norm_sq() if v is not None] if tcfg.log_exact else []
    summary = {
        "command": "train",
        "schema_version": SCHEMA_VERSION,
        "algorithm": tcfg.algorithm,
        "aborted": log.aborted,
        "final_J": log.final_J,
        "optimal_J": J_star,
        "mean_grad_norm_sq": float(np.mean(g)) if g else None,
        "stationarity": log.stationarity() if g and not log.aborted else None,
        "run_dir": str(run_dir),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _emit(summary)
    return code


def _bias_estimator(name: str) -> EstimatorSpec:
    if name == "grpo":
        return EstimatorSpec.grpo().unclipped()
    if name == "tic-grpo":
        return EstimatorSpec.tic().unclipped()
    return EstimatorSpec.ablation()


BIAS_HEADER = (
    "pair", "estimator", "quantity", "z_current", "z_old", "separation",
    "max_abs_bias_current", "max_abs_bias_old", "sigma_bar", "t_inv", "samples", "group_size",
    "matches_current", "matches_old",
)


def cmd_bias_study(cfg: RunConfig, run_dir: Path) -> int:
    """Compare every estimator's Monte Carlo mean with both scaled exact gradients.

    Random ``(theta, theta_old)`` pairs are drawn until ``pairs`` of them have an
    oracle separation above ``separation_min``; the separation is measured with
    the first estimator's Monte Carlo standard errors.
    """
    bs = cfg.bias_study
    task = cfg.build_task()
    rows, accepted, attempts = [], 0, 0
    while accepted < bs.pairs:
        if attempts >= bs.max_attempts:
            raise DegenerateTaskError(
                f"only {accepted} of {bs.pairs} parameter pairs reached separation {bs.separation_min} "
                f"after {attempts} attempts"
            )
        rng = np.random.default_rng([cfg.seed, 2, attempts])
        attempts += 1
        theta_old = PolicyParams.random(task.space, rng, bs.init_scale)
        theta = theta_old.with_flat(theta_old.flat + bs.drift * rng.standard_normal(theta_old.dim))
        stats = group_population_stats(
            theta_old, task.prompt, task.reward_spec, bs.group_size, cfg.oracle.stats_samples, rng, space=task.trajectories
        )
        if stats.sigma_bar < 1e-8:
            continue
        pair_rows = []
        for name in bs.estimators:
            quantities = ["estimate"] if name == "ablation" else ["estimate", "unbiased-term"]
            for q in quantities:
                st = estimator_bias_study(
                    theta, theta_old, _bias_estimator(name), bs.samples, rng,
                    task=task, group_size=bs.group_size, delta=bs.delta, stats=stats, quantity=q,
                )
                if not pair_rows and st.separation <= bs.separation_min:
                    break
                pair_rows.append(
                    [accepted, name, q, st.z_current, st.z_old, st.separation,
                     float(np.max(np.abs(st.mc_mean - st.target_current))),
                     float(np.max(np.abs(st.mc_mean - st.target_old))),
                     stats.sigma_bar, stats.t_inv, st.samples, st.group_size,
                     st.z_current <= bs.z_tol, st.z_old <= bs.z_tol]
                )
            if not pair_rows:
                break
        if pair_rows:
            rows.extend(pair_rows)
            accepted += 1
    _tsv(run_dir / "bias.tsv", BIAS_HEADER, [[repr(v) if isinstance(v, float) else v for v in r] for r in rows])
    summary = {"command": "bias-study", "pairs": accepted, "attempts": attempts, "run_dir": str(run_dir), "rows": []}
    for r in rows:
        summary["rows"].append(dict(zip(("pair", "estimator", "quantity", "z_current", "z_old"), r[:5])))
    _emit(summary)
    return EXIT_OK


def cmd_decompose(cfg: RunConfig, run_dir: Path) -> int:
    """Decomposition term norms at ``theta_old`` and after each of ``K`` inner steps.

    Every inner step ascends the mean estimate over all sampled groups, so the
    drift ``||theta - theta_old||`` grows with ``j`` even when most groups carry
    zero advantage.
    """
    task = cfg.build_task()
    tcfg = cfg.train_config()
    if tcfg.algorithm == "ablation":
        raise ConfigError("the ablation estimator has no decomposition", "train.algorithm")
    spec = tcfg.estimator_spec()
    decompose = decompose_grpo if tcfg.algorithm == "grpo" else decompose_tic
    rng = np.random.default_rng([cfg.seed, 3])
    theta_old = initial_params(cfg, task.space)
    n_groups = cfg.decompose.groups
    if n_groups < 1:
        raise ConfigError("must be >= 1", "decompose.groups")
    groups = [sample_group(theta_old, task.prompt, tcfg.group_size, task.reward_spec, rng, tcfg.delta) for _ in range(n_groups)]
    stats = group_population_stats(
        theta_old, task.prompt, task.reward_spec, tcfg.group_size, cfg.oracle.stats_samples, rng, space=task.trajectories
    )
    if stats.sigma_bar <= 0:
        raise DegenerateTaskError("expected group std is zero at the initial policy")

    rows, records, theta = [], [], theta_old
    for j in range(tcfg.K + 1):
        reports = [decompose(theta, theta_old, grp, spec, stats) for grp in groups]
        drift = float(np.linalg.norm(theta.flat - theta_old.flat))
        names = list(reports[0].terms) + ["whole"]
        rec = {"j": j, "drift": drift, "max_residual": max(r.residual for r in reports), "terms": {}}
        for name in names:
            vecs = np.array([r.whole if name == "whole" else r.terms[name] for r in reports])
            mean_norm = float(np.mean(np.linalg.norm(vecs, axis=1)))
            norm_of_mean = float(np.linalg.norm(vecs.mean(axis=0)))
            rows.append([j, repr(drift), name, repr(mean_norm), repr(norm_of_mean)])
            rec["terms"][name] = {"mean_norm": mean_norm, "norm_of_mean": norm_of_mean}
        records.append(rec)
        if j < tcfg.K:
            grad = np.mean([estimate_gradient(theta, theta_old, grp, spec).vector for grp in groups], axis=0)
            theta = theta.with_flat(theta.flat + tcfg.eta * grad)
            if not np.all(np.isfinite(theta.flat)):
                raise NumericAbort(f"non-finite parameters after inner step {j + 1}")
    _tsv(run_dir / "decompose.tsv", ("j", "drift", "term", "mean_norm", "norm_of_mean"), rows)
    _jsonl(run_dir / "decompose.jsonl", records)
    _emit({
        "command": "decompose", "algorithm": tcfg.algorithm, "groups": n_groups,
        "max_residual": max(r["max_residual"] for r in records), "run_dir": str(run_dir),
    })
    return EXIT_OK


CHECK_HEADER = (
    "kind", "algorithm", "base_eta", "base_K", "base_group_size", "other_eta", "other_group_size",
    "base_mean", "other_mean", "threshold", "passed",
)


def cmd_sweep(cfg: RunConfig, run_dir: Path) -> int:
    sw = cfg.sweep
    task = cfg.build_task()
    base = cfg.train_config()
    if sw.N is not None:
        base = cfg.train_config(N=sw.N)
    grid = {"eta": sw.eta, "K": sw.K, "group_size": sw.group_size}
    for k, values in grid.items():
        for v in values:
            try:
                replace(base, **{k: v}, batch_groups=None)
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], f"sweep.{k}") from exc
    seeds = range(cfg.seed, cfg.seed + sw.seeds)
    table = convergence_sweep(base, task, grid, seeds, tuple(sw.algorithms), sw.burn_in)
    table.write_tsv(run_dir / "sweep.tsv")
    checks = trend_checks(table, sw.noise_sigma)
    _tsv(
        run_dir / "checks.tsv",
        CHECK_HEADER,
        [
            [c.kind, c.algorithm, repr(c.base.eta), c.base.K, c.base.group_size, repr(c.reduced.eta),
             c.reduced.group_size, repr(c.base.mean), repr(c.reduced.mean), repr(c.threshold), c.passed]
            for c in checks
        ],
    )
    _emit({
        "command": "sweep", "cells": len(table.rows), "checks": len(checks),
        "checks_passed": sum(c.passed for c in checks), "run_dir": str(run_dir),
    })
    return EXIT_OK


COMMANDS = {"train": cmd_train, "bias-study": cmd_bias_study, "decompose": cmd_decompose, "sweep": cmd_sweep}


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2**64), got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grpolab", description="GRPO / TIC-GRPO experiments on enumerable token MDPs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="run directory (overrides the output root)")
        sp.add_argument("--seed", type=_u64, default=None, help="seed override")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        run_dir = resolve_run_dir(cfg, args.command, args.out)
        run_dir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, run_dir / "config.json")
        return COMMANDS[args.command](cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateTaskError, ResourceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
