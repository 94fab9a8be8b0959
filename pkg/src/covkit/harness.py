"""Experiment harness: validated configs, seeded sweeps, CSV emission.

A config describes one task x learner pair plus sweep axes (parameter lists
and a seed list).  Every (sweep point, seed) job owns a derived seed subtree
so outputs are byte-identical regardless of worker-thread count.  Emitted
artifacts: per-run ``timeseries.csv`` and ``summary.json`` plus an aggregate
``sweep.csv`` with medians and 1/16-15/16 quantile bands.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tasks as _tasks
from .core import sample_dataset, save_jsonl
from .metrics import CoverageCurve, MetricReport, coverage_exact, coverage_mc, seq_kl
from .models import LinearARModel
from .seeding import SeedTree
from .training import (RunRecord, TrainConfig, mle_fit, policy_stream,
                       sgd_normalized, sgd_token, sgd_truncated_distill,
                       sgd_vanilla)

CSV_VERSION = "covkit-csv-v1"
CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 2)."""


def _graph_task(family, **params):
    from .graphs import (HORIZON_MIX, TEASER_MIX, GraphConfig,
                         GraphPathPolicy, mixture_prompt_sampler)
    allowed = {"m", "L", "nodes_per_layer", "mix"}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown graph params {sorted(unknown)}")
    mix = params.pop("mix", None)
    cfg = GraphConfig(**params)
    if mix is None:
        mix = TEASER_MIX if family == "teaser" else HORIZON_MIX
    piD = GraphPathPolicy(m=cfg.m, horizon=cfg.L + 2, family=family)
    mu = mixture_prompt_sampler(mix, cfg)
    return _tasks.TaskInstance(mu=mu, piD=piD,
                               metadata={"family": family, "mix": mix})


TASKS = {
    "bernoulli": _tasks.bernoulli_task,
    "heterogeneous_kl": _tasks.heterogeneous_kl_instance,
    "sgd_lower": _tasks.sgd_lower_instance,
    "sigma_star": _tasks.sigma_star_instance,
    "misspec": lambda **kw: _tasks.misspec_instance(**kw)[0],
    "graph_teaser": lambda **kw: _graph_task("teaser", **kw),
    "graph_horizon": lambda **kw: _graph_task("horizon", **kw),
}

LEARNERS = ("mle", "sgd_vanilla", "sgd_normalized", "sgd_token",
            "sgd_truncated")

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}

_TOP_KEYS = {"version", "task", "learner", "metrics", "sweep", "out_dir",
             "root_seed"}
_METRIC_KEYS = {"n_grid", "mode", "n_samples", "kl_samples", "delta"}


def _check_keys(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def validate_config(cfg: dict) -> dict:
    """Fail-closed validation; returns a normalized copy."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}")
    for key in ("task", "learner", "out_dir", "root_seed"):
        if key not in cfg:
            raise ConfigError(f"missing config key {key!r}")
    task = cfg["task"]
    _check_keys(task, {"name", "params"}, "task")
    if task.get("name") not in TASKS:
        raise ConfigError(f"unknown task {task.get('name')!r}")
    learner = cfg["learner"]
    _check_keys(learner, {"name", "train"}, "learner")
    if learner.get("name") not in LEARNERS:
        raise ConfigError(f"unknown learner {learner.get('name')!r}")
    train = dict(learner.get("train", {}))
    _check_keys(train, _TRAIN_FIELDS, "learner.train")
    metrics = dict(cfg.get("metrics", {}))
    _check_keys(metrics, _METRIC_KEYS, "metrics")
    if metrics.get("mode", "exact") not in ("exact", "mc"):
        raise ConfigError("metrics.mode must be 'exact' or 'mc'")
    sweep = dict(cfg.get("sweep", {}))
    _check_keys(sweep, {"axes", "seeds"}, "sweep")
    axes = dict(sweep.get("axes", {}))
    seeds = list(sweep.get("seeds", [0]))
    if not seeds:
        raise ConfigError("sweep.seeds must be nonempty")
    task_params = dict(task.get("params", {}))
    for name, values in axes.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {name!r} must be a nonempty list")
        if name not in _TRAIN_FIELDS and name not in task_params:
            raise ConfigError(f"sweep axis {name!r} matches neither a "
                              "train field nor a task parameter")
    out = {
        "version": CONFIG_VERSION,
        "task": {"name": task["name"], "params": task_params},
        "learner": {"name": learner["name"], "train": train},
        "metrics": metrics,
        "sweep": {"axes": axes, "seeds": seeds},
        "out_dir": cfg["out_dir"],
        "root_seed": int(cfg["root_seed"]),
    }
    return out


def build_task(name: str, params: dict):
    try:
        return TASKS[name](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for task {name!r}: {e}")


def run_learner(name: str, task, train: TrainConfig, rng) -> RunRecord:
    if name == "mle":
        dataset = sample_dataset(task.piD, task.mu, train.T, rng)
        if task.featmap is None:
            raise ConfigError("task has no feature map; cannot train")
        res = mle_fit(dataset, task.featmap, task.V, task.H)
        rec = RunRecord(checkpoints=[(train.T, res.theta.copy())],
                        final_theta=res.theta, n_examples=train.T)
        if not res.converged:
            rec.flags.append("mle-not-converged")
        return rec
    if task.featmap is None:
        raise ConfigError("task has no feature map; cannot train")
    stream = policy_stream(task.piD, task.mu, rng)
    if name == "sgd_vanilla":
        return sgd_vanilla(stream, task.featmap, task.V, task.H, train)
    if name == "sgd_normalized":
        return sgd_normalized(stream, task.featmap, task.V, task.H, train)
    if name == "sgd_token":
        return sgd_token(stream, task.featmap, task.V, task.H, train)
    if name == "sgd_truncated":
        return sgd_truncated_distill(stream, task.piD, task.featmap,
                                     task.V, task.H, train)
    raise ConfigError(f"unknown learner {name!r}")


def checkpoint_metrics(task, rec: RunRecord, metrics_spec: dict, tree: SeedTree):
    """MetricReport (seq KL + coverage curve) at every checkpoint."""
    n_grid = np.asarray(metrics_spec.get("n_grid", [2.0, 8.0, 64.0]), float)
    mode = metrics_spec.get("mode", "exact")
    n_samples = int(metrics_spec.get("n_samples", 2000))
    kl_samples = int(metrics_spec.get("kl_samples", n_samples))
    delta = float(metrics_spec.get("delta", 0.05))
    if mode == "exact" and not hasattr(task.mu, "items"):
        raise ConfigError("exact metrics need an enumerable prompt "
                          "distribution; use metrics.mode = 'mc'")
    reports = []
    for i, (t, theta) in enumerate(rec.checkpoints):
        model = LinearARModel(theta, task.featmap, task.V, task.H)
        if mode == "exact":
            kl = seq_kl(task.piD, model, task.mu.items(), mode="exact")
            curve = coverage_exact(task.piD, model, task.mu.items(), n_grid)
        else:
            rng = tree.child("metric", i).rng()
            kl = seq_kl(task.piD, model, None, mode="mc", n=kl_samples,
                        rng=rng, mu_sampler=task.mu)
            curve = coverage_mc(task.piD, model, task.mu, n_grid,
                                n_samples, rng, delta=delta)
        reports.append(MetricReport(seq_kl=kl, coverage=curve))
    rec.metrics = reports
    return reports


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.12g}"
    return str(v)


def timeseries_csv(rec: RunRecord, n_grid) -> str:
    cols = ["t", "n_samples", "seq_kl"] + [f"pcov_{g:g}" for g in n_grid]
    lines = [f"# {CSV_VERSION}", ",".join(cols)]
    for (t, _), rep in zip(rec.checkpoints, rec.metrics):
        row = [str(t), str(rep.coverage.n_samples), _fmt(rep.seq_kl)]
        row += [_fmt(v) for v in rep.coverage.values]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _quantiles(vals):
    vals = np.asarray(vals, dtype=float)
    return (float(np.quantile(vals, 0.5)),
            float(np.quantile(vals, 1.0 / 16.0)),
            float(np.quantile(vals, 15.0 / 16.0)))


def run(cfg: dict) -> str:
    """Execute a validated config; returns the output directory."""
    cfg = validate_config(cfg)
    axes = cfg["sweep"]["axes"]
    seeds = cfg["sweep"]["seeds"]
    axis_names = sorted(axes)
    points = list(itertools.product(*(axes[a] for a in axis_names)))
    metrics_spec = cfg["metrics"]
    n_grid = np.asarray(metrics_spec.get("n_grid", [2.0, 8.0, 64.0]), float)
    out_dir = cfg["out_dir"]
    os.makedirs(os.path.join(out_dir, "runs"), exist_ok=True)

    def job(p_idx, s_idx):
        point = points[p_idx]
        seed = seeds[s_idx]
        task_params = dict(cfg["task"]["params"])
        train_kwargs = dict(cfg["learner"]["train"])
        for name, value in zip(axis_names, point):
            if name in _TRAIN_FIELDS:
                train_kwargs[name] = value
            else:
                task_params[name] = value
        task = build_task(cfg["task"]["name"], task_params)
        try:
            train = TrainConfig(**train_kwargs)
        except ValueError as e:
            raise ConfigError(str(e))
        tree = SeedTree(cfg["root_seed"]).child("sweep", p_idx).child(
            "seed", seed)
        rec = run_learner(cfg["learner"]["name"], task, train,
                          tree.child("train").rng())
        checkpoint_metrics(task, rec, metrics_spec, tree)
        return rec

    threads = max(1, int(os.environ.get("COVKIT_THREADS", "1")))
    jobs = [(p, s) for p in range(len(points)) for s in range(len(seeds))]
    if threads == 1:
        results = {ps: job(*ps) for ps in jobs}
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {ps: pool.submit(job, *ps) for ps in jobs}
        results = {ps: f.result() for ps, f in futs.items()}

    # Emission in fixed (sweep index, seed) order regardless of scheduling.
    sweep_rows = []
    for p_idx in range(len(points)):
        finals = []
        for s_idx in range(len(seeds)):
            rec = results[(p_idx, s_idx)]
            run_id = f"p{p_idx:03d}_s{seeds[s_idx]}"
            run_dir = os.path.join(out_dir, "runs", run_id)
            os.makedirs(run_dir, exist_ok=True)
            with open(os.path.join(run_dir, "timeseries.csv"), "w") as f:
                f.write(timeseries_csv(rec, n_grid))
            summary = rec.summary()
            summary["point"] = dict(zip(axis_names, points[p_idx]))
            summary["seed"] = seeds[s_idx]
            with open(os.path.join(run_dir, "summary.json"), "w") as f:
                json.dump(summary, f, indent=1, sort_keys=True)
            rep = rec.metrics[-1]
            finals.append([rep.seq_kl] + list(rep.coverage.values))
        finals = np.asarray(finals, dtype=float)
        row = [_fmt(v) for v in points[p_idx]]
        for j in range(finals.shape[1]):
            med, lo, hi = _quantiles(finals[:, j])
            row += [_fmt(med), _fmt(lo), _fmt(hi)]
        sweep_rows.append(",".join(row))

    metric_names = ["seq_kl"] + [f"pcov_{g:g}" for g in n_grid]
    cols = list(axis_names)
    for name in metric_names:
        cols += [f"{name}_median", f"{name}_q1_16", f"{name}_q15_16"]
    with open(os.path.join(out_dir, "sweep.csv"), "w") as f:
        f.write(f"# {CSV_VERSION}\n" + ",".join(cols) + "\n")
        f.write("\n".join(sweep_rows) + "\n")
    return out_dir


def gen_data(task_name: str, params: dict, n: int, seed: int, out_path: str,
             header_path=None):
    """Sample a dataset from a task's data policy and write JSONL."""
    task = build_task(task_name, params)
    tree = SeedTree(seed).child("gen-data")
    info = {"task": task_name, "params": params, "seed": seed}
    ds = sample_dataset(task.piD, task.mu, n, tree.rng(), seed_info=info)
    save_jsonl(ds, out_path, header_path=header_path)
    return ds
