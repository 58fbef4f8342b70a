"""Experiment runner, reporter, and trace verifier.

  umf run <config.json> --out <dir> [--workers N]
  umf report <dir>
  umf verify <dir>

The seed in the config can be overridden with the UMF_SEED environment
variable. Exit codes: 0 success, 1 configuration error, 2 runtime error
(partial results are kept).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__, baselines, search
from .config import BuiltProblem, ExperimentConfig, MethodSpec, build_problem, load_config
from .core import DIGEST_ALGO, stable_seed
from .errors import ConfigError, MissingResults, UmfError

SUMMARY_COLUMNS = (
    "problem",
    "method",
    "budget",
    "best_reward",
    "nfe_consumed",
    "cache_hit_rate",
    "wall_time",
)
SCALING_COLUMNS = ("budget", "best_reward", "nfe_consumed", "cache_hit_rate")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


@dataclass
class CellResult:
    problem: str
    method: str
    budget: int
    best_reward: float
    nfe_consumed: int
    cache_hit_rate: float
    wall_time: float
    trace: list[dict]
    tree_dump: dict | None
    holdout_reward: float | None = None
    error: str | None = None


def _tree_dump(node: search.TreeNode, best_path: tuple[str, ...], prefix=()) -> dict:
    starred = best_path[: len(prefix)] == tuple(prefix) and len(prefix) <= len(best_path)
    return {
        "action": node.action_id,
        "depth": node.depth,
        "visits": node.visit_count,
        "mean_reward": round(node.mean_reward, 10),
        "starred": starred,
        "children": [
            _tree_dump(child, best_path, tuple(prefix) + (child.action_id,))
            for child in node.children.values()
        ],
    }


def _run_method(
    method: MethodSpec,
    built: BuiltProblem,
    cfg: ExperimentConfig,
    budget: int,
    seed: int,
):
    actions = cfg.actions
    lookup = {a.id: a for a in actions}
    if method.kind == "umf":
        chosen = [lookup[a] for a in method.params.get("actions", [])] or list(actions)
        return search.run(
            built.initial_state,
            chosen,
            cfg.schedule,
            built.registry,
            built.reward_provider,
            budget,
            cache_enabled=method.params.get("cache", cfg.cache),
            seed=seed,
            c_exp=cfg.c_exp,
        )
    if method.kind == "bon":
        return baselines.best_of_n(
            built.initial_state,
            lookup[method.params["action"]],
            budget,
            cfg.schedule,
            built.registry,
            built.reward_provider,
            seed=seed,
        )
    if method.kind == "dts_like":
        chosen = [lookup[a] for a in method.params.get("actions", [])] or list(actions)
        return baselines.dts_like(
            built.initial_state,
            chosen,
            budget,
            cfg.schedule,
            built.registry,
            built.reward_provider,
            seed=seed,
            branch_width=int(method.params.get("branch_width", 4)),
            c_exp=cfg.c_exp,
        )
    # pair: two independent arms at half budget each
    arm_a, arm_b = method.params["arms"]

    def runner(arm: MethodSpec):
        def run_arm(arm_budget: int):
            return _run_method(arm, built, cfg, arm_budget, stable_seed(seed, arm.name))
        return run_arm

    return baselines.pair(runner(arm_a), runner(arm_b), budget)


def _run_cell(cfg: ExperimentConfig, problem, method: MethodSpec, budget: int) -> CellResult:
    started = time.perf_counter()
    try:
        built = build_problem(problem)
        seed = stable_seed(cfg.seed, problem.id, method.name)
        result = _run_method(method, built, cfg, budget, seed)
        tree_dump = None
        if isinstance(result, search.SearchResult):
            tree_dump = _tree_dump(result.root, result.best_path)
        holdout_reward = None
        if built.holdout_provider is not None:
            holdout_reward = float(built.holdout_provider.score(result.best_state))
        return CellResult(
            problem=problem.id,
            method=method.name,
            budget=budget,
            best_reward=result.best_reward,
            nfe_consumed=result.ledger.consumed,
            cache_hit_rate=result.ledger.cache_hit_rate,
            wall_time=time.perf_counter() - started,
            trace=result.trace,
            tree_dump=tree_dump,
            holdout_reward=holdout_reward,
        )
    except UmfError as exc:
        return CellResult(
            problem=problem.id,
            method=method.name,
            budget=budget,
            best_reward=float("nan"),
            nfe_consumed=0,
            cache_hit_rate=0.0,
            wall_time=time.perf_counter() - started,
            trace=[],
            tree_dump=None,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(config_path: str | Path, out_dir: str | Path, workers: int = 1) -> int:
    """Execute every (problem, method, budget) cell; returns the exit code."""
    cfg = load_config(config_path)
    env_seed = os.environ.get("UMF_SEED")
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError as exc:
            raise ConfigError(f"UMF_SEED must be an integer, got {env_seed!r}") from exc
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "trees").mkdir(exist_ok=True)
    echo = dict(cfg.raw)
    echo["seed"] = cfg.seed
    echo["digest_algo"] = DIGEST_ALGO
    echo["engine_version"] = __version__
    (out / "config.json").write_text(json.dumps(echo, indent=2) + "\n")

    cells = [
        (problem, method, budget)
        for problem in cfg.problems
        for method in cfg.methods
        for budget in cfg.budgets
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        results = [_run_cell(cfg, *cell) for cell in cells]

    errors = []
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for cell in results:
            stem = f"{cell.problem}__{cell.method}__{cell.budget}"
            if cell.error is not None:
                errors.append({"cell": stem, "error": cell.error})
                continue
            with open(out / "traces" / f"{stem}.jsonl", "w") as tf:
                for record in cell.trace:
                    tf.write(json.dumps(record, sort_keys=True) + "\n")
            if cell.tree_dump is not None:
                (out / "trees" / f"{stem}.json").write_text(
                    json.dumps(cell.tree_dump, indent=2) + "\n"
                )
            writer.writerow(
                [
                    cell.problem,
                    cell.method,
                    cell.budget,
                    _fmt(cell.best_reward),
                    cell.nfe_consumed,
                    _fmt(cell.cache_hit_rate),
                    f"{cell.wall_time:.6f}",
                ]
            )

    # scaling CSV per method: budgets as rows, means across problems
    ok = [c for c in results if c.error is None]
    for method in cfg.methods:
        rows = [c for c in ok if c.method == method.name]
        if not rows:
            continue
        with open(out / f"scaling_{method.name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SCALING_COLUMNS)
            for budget in cfg.budgets:
                at_budget = [c for c in rows if c.budget == budget]
                if not at_budget:
                    continue
                n = len(at_budget)
                writer.writerow(
                    [
                        budget,
                        _fmt(sum(c.best_reward for c in at_budget) / n),
                        _fmt(sum(c.nfe_consumed for c in at_budget) / n),
                        _fmt(sum(c.cache_hit_rate for c in at_budget) / n),
                    ]
                )
    # held-out evaluations live beside the summary, never inside its columns
    holdout_rows = [c for c in ok if c.holdout_reward is not None]
    if holdout_rows:
        with open(out / "holdout.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["problem", "method", "budget", "holdout_reward"])
            for cell in holdout_rows:
                writer.writerow(
                    [cell.problem, cell.method, cell.budget, _fmt(cell.holdout_reward)]
                )
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2) + "\n")
        return 2
    return 0


def _load_summary(out: Path) -> list[dict]:
    summary = out / "summary.csv"
    if not summary.exists():
        raise MissingResults(f"no summary.csv under {out}")
    with open(summary, newline="") as fh:
        return list(csv.DictReader(fh))


def _render_tree(node: dict, indent: int = 0) -> list[str]:
    label = node["action"] if node["action"] is not None else "root"
    star = " *" if node["starred"] else ""
    lines = [
        f"{'  ' * indent}[{label}] depth={node['depth']} visits={node['visits']} "
        f"mean={node['mean_reward']:.4f}{star}"
    ]
    for child in node["children"]:
        lines.extend(_render_tree(child, indent + 1))
    return lines


def report(out_dir: str | Path) -> str:
    """Human-readable scaling summary plus starred search-tree renderings."""
    out = Path(out_dir)
    rows = _load_summary(out)
    lines: list[str] = []
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        lines.append(f"== method {method}")
        for row in rows:
            if row["method"] != method:
                continue
            lines.append(
                f"  problem={row['problem']} budget={row['budget']} "
                f"best_reward={row['best_reward']} nfe={row['nfe_consumed']} "
                f"cache_hit_rate={row['cache_hit_rate']}"
            )
    for trace_path in sorted((out / "traces").glob("*.jsonl")):
        records = [json.loads(line) for line in trace_path.read_text().splitlines()]
        if not records:
            continue
        lines.append(f"-- best-so-far vs NFE: {trace_path.stem}")
        for record in records:
            lines.append(f"   nfe={record['nfe_consumed']:>8} best={record['best_so_far']}")
    for tree_path in sorted((out / "trees").glob("*.json")):
        lines.append(f"-- search tree: {tree_path.stem} (* marks the submitted path)")
        lines.extend(_render_tree(json.loads(tree_path.read_text())))
    return "\n".join(lines)


def verify(out_dir: str | Path) -> tuple[bool, list[str]]:
    """Re-check trace invariants; returns (all_ok, one message per check)."""
    out = Path(out_dir)
    messages = []
    ok = True

    def check(name: str, condition: bool) -> None:
        nonlocal ok
        messages.append(f"{'PASS' if condition else 'FAIL'}: {name}")
        ok = ok and condition

    try:
        rows = _load_summary(out)
    except MissingResults as exc:
        return False, [f"FAIL: {exc}"]
    check("summary columns", rows == [] or tuple(rows[0].keys()) == SUMMARY_COLUMNS)
    trace_files = sorted((out / "traces").glob("*.jsonl"))
    check("traces present", bool(trace_files))
    for path in trace_files:
        records = [json.loads(line) for line in path.read_text().splitlines()]
        best = 0.0
        nfe = 0
        monotone_best = True
        monotone_nfe = True
        free_hits = True
        rewards_in_range = True
        for record in records:
            monotone_best &= record["best_so_far"] >= best
            best = record["best_so_far"]
            monotone_nfe &= record["nfe_consumed"] >= nfe
            if record["cache_hit"]:
                free_hits &= record["nfe_consumed"] == record["nfe_before"]
            nfe = record["nfe_consumed"]
            rewards_in_range &= 0.0 <= record["reward"] <= 1.0
        check(f"{path.stem}: best-so-far non-decreasing", monotone_best)
        check(f"{path.stem}: nfe non-decreasing", monotone_nfe)
        check(f"{path.stem}: cache hits cost zero", free_hits)
        check(f"{path.stem}: rewards within [0, 1]", rewards_in_range)
    return ok, messages


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="umf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config")
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--workers", type=int, default=1)
    report_p = sub.add_parser("report", help="render results and search trees")
    report_p.add_argument("dir")
    verify_p = sub.add_parser("verify", help="re-check invariants over traces")
    verify_p.add_argument("dir")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_experiment(args.config, args.out, workers=args.workers)
        if args.command == "report":
            print(report(args.dir))
            return 0
        ok, messages = verify(args.dir)
        print("\n".join(messages))
        return 0 if ok else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except UmfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
