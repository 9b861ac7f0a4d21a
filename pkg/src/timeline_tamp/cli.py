"""Command-line entry point: plan, simulate, bench, oracle, gen-mosaic, estimate-synergy."""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import domain, motion, oracle, planner, sim
from .model import Worker

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_TIMEOUT = 0, 1, 2, 3
SUITES = ("exp1", "exp2", "exp3")


class UnknownSuite(ValueError):
    pass


def parse_budget(text: str | None) -> float | None:
    """'0ms', '250ms', '10s', '2m' or a bare number of seconds."""
    if text is None:
        return None
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(ms|s|m)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad budget {text!r}")
    value = float(m.group(1))
    return value * {"ms": 1e-3, "s": 1.0, "m": 60.0, None: 1.0}[m.group(2)]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_problem(path: str) -> domain.ProblemSpec:
    return domain.parse_problem(path)


# -- bench --------------------------------------------------------------------------------


@dataclass
class BenchReport:
    suite: str
    columns: list
    rows: list = field(default_factory=list)

    def aggregates(self) -> list:
        out = []
        configs = sorted({r["config"] for r in self.rows})
        metrics = [c for c in self.columns if c not in ("config", "run_id", "seed")]
        for cfg in configs:
            sub = [r for r in self.rows if r["config"] == cfg]
            for k in metrics:
                vals = [float(r[k]) for r in sub]
                out.append({
                    "config": cfg,
                    "metric": k,
                    "mean": statistics.fmean(vals),
                    "stdev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                    "n": len(vals),
                })
        return out

    def mean(self, config: str, metric: str) -> float:
        return statistics.fmean(float(r[metric]) for r in self.rows if r["config"] == config)

    def rows_csv(self) -> str:
        return _csv(self.columns, sorted(self.rows, key=lambda r: (r["config"], r["seed"])))

    def summary_csv(self) -> str:
        return _csv(["config", "metric", "mean", "stdev", "n"], self.aggregates())


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _metric_row(config, run_id, seed, m: sim.Metrics) -> dict:
    row = {"config": config}
    row.update(m.row(run_id, seed))
    return row


def bench_exp1(runs: int, seed: int, delta: float = 5.0) -> BenchReport:
    """Flexible vs rigid planning on the 9-cube mosaic under perturbed human durations."""
    problem = domain.generate_mosaic(domain.load_mosaic("mosaic-9"), seed=seed)
    report = BenchReport("exp1", ["config"] + sim.METRIC_COLUMNS)
    for mode in ("flexible", "rigid"):
        plan = planner.synthesize_plan(problem, mode=mode)
        for i in range(runs):
            s = seed + i
            _, m = sim.simulate(plan, problem, config=sim.SimConfig(seed=s, human_delta=delta))
            report.rows.append(_metric_row(mode, f"{mode}-{i}", s, m))
    return report


@dataclass
class PickRecord:
    seed: int
    task: str
    multi: float
    single: float


def robot_task_run(problem, strategy: str, picks: list | None = None, seed: int = 0):
    """Execute every robot-capable task in order with one goal strategy.

    Returns (distance, execution time, search expansions). When ``picks`` is
    given, the pick leg of each action is also solved with the single-goal
    baseline from the same state and both costs are recorded.
    """
    ws = problem.workspace
    scene = motion.Scene(ws)
    static = scene.blocked()
    q = motion.Configuration(ws.home("robot"))
    dist = exec_time = 0.0
    stats = motion.SearchStats()
    for t in problem.tasks:
        if Worker.ROBOT not in t.allowed_workers:
            continue
        if picks is not None:
            graph = motion.get_goals_from_scene(motion.PICK_AND_PLACE, scene, t, start=q)
            blocked = scene.blocked() - {q.cell}
            mg = motion.multi_goal_plan(ws, q, graph.layers[1], "exact", blocked)
            sg = motion.closest_goal_plan(ws, q, graph.layers[1], blocked)
            picks.append(PickRecord(seed, t.id, mg.cost, sg.cost))
        ref = motion.refine_task_to_motion(scene, motion.PICK_AND_PLACE, t, q, "exact", strategy,
                                           stats=stats, static_blocked=static)
        for label, cell in ref.picked.items():
            scene.take(label, cell)
        dist += ref.cost
        exec_time += ref.duration(ws)
        q = ref.end
    return dist, exec_time, stats.expansions


def bench_exp2(runs: int, seed: int, picks: list | None = None) -> BenchReport:
    """Goal strategies on the 50-cube robot task set, one workspace per seed."""
    cols = ["config", "run_id", "seed", "distance", "exec_time", "planning_nodes"]
    report = BenchReport("exp2", cols)
    spec = domain.load_mosaic("mosaic-50")
    for i in range(runs):
        s = seed + i
        problem = domain.generate_mosaic(spec, seed=s)
        for strategy in ("precomputed", "single_goal", "multi_goal"):
            rec = picks if strategy == "multi_goal" else None
            d, et, nodes = robot_task_run(problem, strategy, rec, s)
            report.rows.append({"config": strategy, "run_id": f"{strategy}-{i}", "seed": s,
                                "distance": d, "exec_time": et, "planning_nodes": nodes})
    return report


def bench_exp3(runs: int, seed: int) -> BenchReport:
    """Optimized plan vs random feasible plans on the 50-cube mosaic."""
    problem = domain.generate_mosaic(domain.load_mosaic("mosaic-50"), seed=seed)
    report = BenchReport("exp3", ["config"] + sim.METRIC_COLUMNS)
    optimized = planner.synthesize_plan(problem)
    for i in range(runs):
        s = seed + i
        _, m = sim.simulate(optimized, problem, config=sim.SimConfig(seed=s))
        report.rows.append(_metric_row("optimized", f"optimized-{i}", s, m))
        feasible = planner.random_feasible_plan(problem, np.random.default_rng(s))
        _, m = sim.simulate(feasible, problem, config=sim.SimConfig(seed=s))
        report.rows.append(_metric_row("feasible", f"feasible-{i}", s, m))
    return report


def run_bench(suite: str, runs: int = 20, seed: int = 0) -> BenchReport:
    if suite == "exp1":
        return bench_exp1(runs, seed)
    if suite == "exp2":
        return bench_exp2(runs, seed)
    if suite == "exp3":
        return bench_exp3(runs, seed)
    raise UnknownSuite(suite)


# -- commands -----------------------------------------------------------------------------


def cmd_plan(args) -> int:
    try:
        problem = _load_problem(args.problem)
    except FileNotFoundError:
        print(f"error: no such file: {args.problem}", file=sys.stderr)
        return EXIT_ERROR
    except (domain.ParseError, domain.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.midpoints:
        problem = domain.collapse_to_midpoints(problem)
    try:
        sol = planner.synthesize_plan(problem, budget=args.budget, mode=args.mode, search=args.search,
                                      max_expansions=args.max_expansions)
    except planner.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except planner.PlanningTimeout as exc:
        print(f"timeout: {exc} {json.dumps(exc.stats, sort_keys=True)}", file=sys.stderr)
        return EXIT_TIMEOUT
    if args.no_timing:
        sol.stats.pop("wall_time", None)
    _emit(json.dumps(sol.to_json(), indent=1, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        problem = _load_problem(args.problem)
        plan = planner.SolutionPlan.from_json(json.loads(Path(args.plan).read_text()))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    rows, traces = [], []
    for i in range(args.runs):
        s = args.seed + i
        cfg = sim.SimConfig(seed=s, human_delta=args.delta, replan_policy=sim.ReplanPolicy(args.policy),
                            max_replans=args.max_replans)
        try:
            trace, m = sim.simulate(plan, problem, config=cfg)
        except sim.SimError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        rows.append(m.row(f"run-{i}", s))
        traces.append(trace.to_jsonl())
    if args.trace:
        Path(args.trace).write_text("".join(traces))
    _emit(sim.write_metrics_csv(rows), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        report = run_bench(args.suite, args.runs, args.seed)
    except UnknownSuite:
        print(f"error: unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_ERROR
    _emit(report.rows_csv(), args.out)
    summary = report.summary_csv()
    if args.out:
        p = Path(args.out)
        p.with_name(p.stem + "_summary.csv").write_text(summary)
    else:
        sys.stdout.write("\n" + summary)
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        problem = _load_problem(args.problem)
    except FileNotFoundError:
        print(f"error: no such file: {args.problem}", file=sys.stderr)
        return EXIT_ERROR
    if args.midpoints:
        problem = domain.collapse_to_midpoints(problem)
    tasks, capable, durations = oracle.problem_inputs(problem)
    try:
        front = oracle.oracle_pareto(tasks, capable, durations, problem.synergy, args.objective)
    except oracle.TooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    best = oracle.select_min_fs_first(front)
    doc = {
        "objective": args.objective,
        "pareto": [{"f_d": c.f_d, "f_s": c.f_s, "assignment": m.to_json()} for m, c in
                   sorted(front, key=lambda mc: (mc[1].f_s, mc[1].f_d))],
        "selected": {"f_d": best[1].f_d, "f_s": best[1].f_s},
    }
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return EXIT_OK


def cmd_gen_mosaic(args) -> int:
    if Path(args.mosaic).exists():
        spec = domain.MosaicSpec.from_json(json.loads(Path(args.mosaic).read_text()))
    else:
        try:
            spec = domain.load_mosaic(args.mosaic)
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_ERROR
    try:
        problem = domain.generate_mosaic(spec, seed=args.seed, delta=args.delta, row_precedence=args.row_precedence)
    except domain.InfeasibleSpec as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _emit(json.dumps(problem.to_json(), indent=1) + "\n", args.out)
    return EXIT_OK


def cmd_estimate_synergy(args) -> int:
    try:
        problem = _load_problem(args.problem)
    except FileNotFoundError:
        print(f"error: no such file: {args.problem}", file=sys.stderr)
        return EXIT_ERROR
    problem.synergy = sim.estimate_synergy_matrix(problem, samples=args.samples, seed=args.seed,
                                                  human_delta=args.delta)
    _emit(json.dumps(problem.to_json(), indent=1) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--budget", type=parse_budget, default=None,
                        help="planning time limit, e.g. 500ms, 10s, 2m (default: none)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")

    p = argparse.ArgumentParser(prog="timeline-tamp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", parents=[common], help="synthesize a plan for a problem file")
    sp.add_argument("problem")
    sp.add_argument("--mode", choices=["flexible", "rigid"], default="flexible")
    sp.add_argument("--search", choices=["auto", "exact", "greedy"], default="auto",
                    help="exact: optimal search for small problems; greedy: fast worst-case projections")
    sp.add_argument("--max-expansions", type=int, default=None)
    sp.add_argument("--midpoints", action="store_true", help="collapse durations to their midpoints first")
    sp.add_argument("--no-timing", action="store_true", help="omit wall time so output is byte-stable")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", parents=[common], help="execute a plan in the simulator")
    sp.add_argument("problem")
    sp.add_argument("plan")
    sp.add_argument("--runs", type=int, default=1)
    sp.add_argument("--delta", type=float, default=5.0, help="human duration uncertainty")
    sp.add_argument("--policy", choices=[p.value for p in sim.ReplanPolicy], default="both")
    sp.add_argument("--max-replans", type=int, default=100)
    sp.add_argument("--trace", default=None, help="write the event trace (JSON lines) here")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", parents=[common], help="reproduce an experiment suite")
    sp.add_argument("suite", help="exp1 | exp2 | exp3")
    sp.add_argument("--runs", type=int, default=20)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("oracle", parents=[common], help="exhaustive Pareto set of a small problem")
    sp.add_argument("problem")
    sp.add_argument("--objective", choices=["literal", "timeline"], default="timeline")
    sp.add_argument("--midpoints", action="store_true")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gen-mosaic", parents=[common], help="generate a mosaic problem file")
    sp.add_argument("mosaic", help="built-in name (mosaic-4, mosaic-9, mosaic-16, mosaic-50) or spec file")
    sp.add_argument("--delta", type=float, default=domain.DEFAULT_DELTA)
    sp.add_argument("--row-precedence", action="store_true")
    sp.set_defaults(func=cmd_gen_mosaic)

    sp = sub.add_parser("estimate-synergy", parents=[common], help="fill a problem's synergy matrix by simulation")
    sp.add_argument("problem")
    sp.add_argument("--samples", type=int, default=3)
    sp.add_argument("--delta", type=float, default=5.0)
    sp.set_defaults(func=cmd_estimate_synergy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
