"""Command-line interface.

Subcommands: run, gen-data, eval-coverage, tournament, bon.  Exit codes:
0 success, 2 validation error, 3 runtime error; failures emit a one-line
error JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .core import load_jsonl
from .decoding import adversarial_reward, bon_regret
from .harness import ConfigError, build_task, gen_data, run
from .metrics import coverage_exact, coverage_mc
from .models import TabularModel
from .seeding import SeedTree
from .selection import (CandidateClass, offset_tournament, select_ce,
                        simple_tournament)


def load_policy(path: str) -> TabularModel:
    """Tabular policy JSON: {"type","V","H","tables":[{"x","prefix","p"}]}."""
    with open(path) as f:
        spec = json.load(f)
    if spec.get("type") != "tabular":
        raise ConfigError(f"unsupported policy type {spec.get('type')!r}")
    tables = {}
    for row in spec.get("tables", []):
        x = row["x"]
        if isinstance(x, list):
            x = tuple(x)
        tables[(x, tuple(row["prefix"]))] = row["p"]
    return TabularModel(tables, V=int(spec["V"]), H=int(spec["H"]),
                        default=spec.get("default"))


def _parse_grid(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad N grid {text!r}")


def _load_task_file(path: str):
    with open(path) as f:
        spec = json.load(f)
    if set(spec) - {"name", "params"}:
        raise ConfigError("task file must have only 'name' and 'params'")
    return build_task(spec["name"], spec.get("params", {}))


def cmd_run(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    out = run(cfg)
    print(json.dumps({"out_dir": out}))
    return 0


def cmd_gen_data(args) -> int:
    params = json.loads(args.params)
    gen_data(args.task, params, args.n, args.seed, args.out,
             header_path=args.header)
    print(json.dumps({"out": args.out, "n": args.n}))
    return 0


def cmd_eval_coverage(args) -> int:
    task = _load_task_file(args.task)
    piD = load_policy(args.pi_d) if args.pi_d else task.piD
    piHat = load_policy(args.pi_hat)
    grid = _parse_grid(args.N_grid)
    if args.mode == "exact":
        curve = coverage_exact(piD, piHat, task.mu.items(), grid)
    else:
        rng = SeedTree(args.seed).child("eval-coverage").rng()
        curve = coverage_mc(piD, piHat, task.mu, grid, args.n_samples, rng,
                            interval=args.interval)
    sys.stdout.write(curve.to_csv())
    return 0


def cmd_tournament(args) -> int:
    cands = CandidateClass([load_policy(p) for p in args.candidates])
    first = cands.candidates[0]
    dataset = load_jsonl(args.data, H=first.H, V=first.V)
    if args.rule == "ce":
        report = select_ce(cands, dataset, return_report=True)
    elif args.rule == "simple":
        report = simple_tournament(cands, dataset, args.N, return_report=True)
    else:
        rng = SeedTree(args.seed).child("tournament").rng()
        report = offset_tournament(cands, dataset, args.N, gamma=args.gamma,
                                   rng=rng, return_report=True)
    print(report.to_json())
    return 0


def cmd_bon(args) -> int:
    task = _load_task_file(args.task)
    piHat = load_policy(args.pi_hat)
    scale = args.reward_scale
    reward = adversarial_reward(task.piD, piHat, scale)
    rng = SeedTree(args.seed).child("bon").rng()
    pcov_ref = ""
    if hasattr(task.mu, "items"):
        curve = coverage_exact(task.piD, piHat, task.mu.items(),
                               [2.0 * scale])
        pcov_ref = f"{curve.values[0]:.12g}"
    print("N,regret,half_width,pcov_ref")
    for N in _parse_grid(args.N_grid):
        est, hw = bon_regret(piHat, task.piD, reward, task.mu, int(N),
                             args.trials, rng)
        print(f"{N:g},{est:.12g},{hw:.12g},{pcov_ref}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covkit",
                                description="coverage-profile experiments")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("run", help="execute an experiment config")
    q.add_argument("config")
    q.set_defaults(fn=cmd_run)

    q = sub.add_parser("gen-data", help="sample a dataset to JSONL")
    q.add_argument("--task", required=True)
    q.add_argument("--params", default="{}")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--header")
    q.set_defaults(fn=cmd_gen_data)

    q = sub.add_parser("eval-coverage", help="coverage curve between policies")
    q.add_argument("--pi-d")
    q.add_argument("--pi-hat", required=True)
    q.add_argument("--task", required=True)
    q.add_argument("--N-grid", required=True)
    q.add_argument("--mode", choices=["exact", "mc"], default="exact")
    q.add_argument("--n-samples", type=int, default=2000)
    q.add_argument("--interval", choices=["hoeffding", "wilson"],
                   default="hoeffding")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=cmd_eval_coverage)

    q = sub.add_parser("tournament", help="model selection over candidates")
    q.add_argument("--candidates", nargs="+", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--N", type=float, default=16.0)
    q.add_argument("--rule", choices=["ce", "simple", "offset"],
                   default="simple")
    q.add_argument("--gamma", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=cmd_tournament)

    q = sub.add_parser("bon", help="Best-of-N regret sweep")
    q.add_argument("--task", required=True)
    q.add_argument("--pi-hat", required=True)
    q.add_argument("--N-grid", required=True)
    q.add_argument("--reward-scale", type=float, default=8.0)
    q.add_argument("--trials", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=cmd_bon)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as e:
        sys.stderr.write(json.dumps(
            {"error": str(e), "kind": "validation"}) + "\n")
        return 2
    except Exception as e:
        sys.stderr.write(json.dumps(
            {"error": str(e), "kind": "runtime"}) + "\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
