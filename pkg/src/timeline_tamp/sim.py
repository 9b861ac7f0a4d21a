"""Discrete-event execution of plans with a stochastic human and replanning."""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .domain import ProblemSpec, residual_problem
from .model import SynergyMatrix, Worker
from .motion import (
    PICK_AND_PLACE,
    Configuration,
    MotionError,
    MotionFailure,
    Sampling,
    Scene,
    get_goals_from_scene,
    multi_goal_plan,
    refine_task_to_motion,
)
from .planner import PlanningError, SolutionPlan, synthesize_plan


class SimError(RuntimeError):
    pass


class ReplanBudgetExhausted(SimError):
    pass


class DeadlockDetected(SimError):
    pass


class EmptyTrace(ValueError):
    pass


class ReplanPolicy(str, Enum):
    ON_FAILURE = "on_failure"
    ON_DEADLINE_MISS = "on_deadline_miss"
    BOTH = "both"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    human_delta: float = 5.0
    time_step: float = 0.5
    replan_policy: ReplanPolicy = ReplanPolicy.BOTH
    max_replans: int = 100
    replan_latency: float = 2.0
    replan_search: str = "greedy"
    motion_mode: str = "exact"  # or "sampling"
    sampling_iterations: int = 2000
    strategy: str = "multi_goal"
    deadline_slack: float = 1.0

    def __post_init__(self):
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")
        if self.human_delta < 0:
            raise ValueError("human_delta must be non-negative")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # TaskStart | TaskEnd | SafetyHoldStart | SafetyHoldEnd | Replan | Failure
    worker: str | None = None
    task: str | None = None
    info: dict = field(default_factory=dict, compare=False, hash=False)

    def to_json(self) -> dict:
        d = {"t": self.time, "kind": self.kind, "worker": self.worker, "task": self.task}
        if self.info:
            d["info"] = self.info
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Event":
        return cls(float(d["t"]), d["kind"], d.get("worker"), d.get("task"), dict(d.get("info", {})))


@dataclass
class ExecutionTrace:
    events: list = field(default_factory=list)

    def add(self, *args, **kw) -> None:
        self.events.append(Event(*args, **kw))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "ExecutionTrace":
        return cls([Event.from_json(json.loads(line)) for line in text.splitlines() if line.strip()])

    def of_kind(self, kind: str) -> list:
        return [e for e in self.events if e.kind == kind]


@dataclass(frozen=True)
class Metrics:
    et_p: float
    et_r: float
    et_h: float
    st: float
    it: float
    ct: float
    replans: int = 0

    def row(self, run_id, seed) -> dict:
        d = {"run_id": run_id, "seed": seed}
        d.update(asdict(self))
        return d


METRIC_COLUMNS = ["run_id", "seed", "et_p", "et_r", "et_h", "st", "it", "ct", "replans"]


def compute_metrics(trace: ExecutionTrace) -> Metrics:
    """ET_P = max(ET_R, ET_H); IT = 100|ET_R - ET_H|/ET_P; CT = 100(min(ET_R, ET_H) - ST)/ET_P."""
    if not trace.events:
        raise EmptyTrace("trace has no events")
    et = {Worker.ROBOT.value: 0.0, Worker.HUMAN.value: 0.0}
    st = 0.0
    hold_start = None
    replans = 0
    for e in trace.events:
        if e.kind == "TaskEnd" and e.worker in et:
            et[e.worker] = max(et[e.worker], e.time)
        elif e.kind == "SafetyHoldStart":
            hold_start = e.time
        elif e.kind == "SafetyHoldEnd" and hold_start is not None:
            st += e.time - hold_start
            hold_start = None
        elif e.kind == "Replan":
            replans += 1
    et_r, et_h = et["robot"], et["human"]
    et_p = max(et_r, et_h)
    if et_p <= 0:
        return Metrics(0.0, et_r, et_h, st, 0.0, 0.0, replans)
    return Metrics(et_p, et_r, et_h, st, 100.0 * abs(et_r - et_h) / et_p,
                   100.0 * (min(et_r, et_h) - st) / et_p, replans)


def write_metrics_csv(rows: list, path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in METRIC_COLUMNS})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


# -- agents -------------------------------------------------------------------------------


@dataclass
class _HumanTask:
    task: str
    start: float
    duration: float
    path: list

    def cell_at(self, t: float):
        if len(self.path) == 1 or self.duration <= 0:
            return self.path[-1]
        frac = min(1.0, max(0.0, (t - self.start) / self.duration))
        return self.path[min(len(self.path) - 1, int(frac * (len(self.path) - 1) + 1e-9))]


@dataclass
class _RobotTask:
    task: str
    start: float
    steps: list  # ("move", cell) | ("grip", op)
    index: int = 0


def _within(a, b, radius) -> bool:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 <= radius * radius + 1e-9


class Simulator:
    """Event loop over both workers.

    The human walks shortest paths spread over its sampled duration. The
    robot refines each task into motion when it starts it and steps cell by
    cell, slowing down whenever the human is within the safety radius.
    """

    def __init__(self, problem: ProblemSpec, plan: SolutionPlan, config: SimConfig = SimConfig(),
                 workspace=None, planner_mode: str | None = None):
        self.problem = problem
        self.ws = workspace or problem.workspace
        if self.ws is None:
            raise SimError("simulation needs a workspace")
        self.config = config
        self.mode = planner_mode or plan.mode
        self.rng = np.random.default_rng(config.seed)
        self.trace = ExecutionTrace()
        self.scene = Scene(self.ws)
        self.static_blocked = self.scene.blocked()
        self.robot_cell = self.ws.home("robot")
        self.human_cell = self.ws.home("human")
        self.completed: set = set()
        self.running: dict = {}  # worker -> task object
        self.queue: list = []
        self._seq = itertools.count()
        self.replans = 0
        self.epoch = 0
        self.frozen_until = 0.0
        self.holding = False
        self.human_task: _HumanTask | None = None
        self.robot_task: _RobotTask | None = None
        self.forbidden: dict = {}  # task -> workers that failed on it
        self.durations_realized: dict = {}
        self.now = 0.0
        self._adopt(plan, 0.0)

    # -- plan handling ------------------------------------------------------------------
    def _adopt(self, plan: SolutionPlan, base: float) -> None:
        self.plan = plan
        self.base = base
        toks = {t.id: t for t in plan.tokens}
        self.pending = {w: [v for v in plan.sequence(w) if v not in self.completed] for w in Worker}
        self.preds: dict = {}
        for a, b in plan.precedences:
            self.preds.setdefault(toks[b].value, set()).add(toks[a].value)
        self.planned = {t.value: t for t in plan.tokens if t.worker is not None}
        for t in plan.tokens:
            if t.worker is None:
                continue
            self._push(base + t.latest_end + self.config.deadline_slack, "deadline", (self.epoch, t.value))

    def _push(self, t: float, kind: str, data=None) -> None:
        heapq.heappush(self.queue, (t, next(self._seq), kind, data))

    # -- main loop ----------------------------------------------------------------------
    def run(self) -> tuple:
        self._push(0.0, "dispatch")
        all_tasks = {t.id for t in self.problem.tasks}
        while self.queue:
            t, _, kind, data = heapq.heappop(self.queue)
            self.now = t
            if kind == "dispatch":
                self._dispatch(t)
            elif kind == "robot_step":
                self._robot_step(t)
            elif kind == "human_end":
                self._finish(Worker.HUMAN, t)
            elif kind == "deadline":
                epoch, task = data
                if epoch == self.epoch and task not in self.completed and self._policy(deadline=True):
                    self._replan(t, reason="deadline", task=task)
            if self.completed >= all_tasks and not self.running:
                break
        if not self.completed >= all_tasks:
            missing = sorted(all_tasks - self.completed)
            raise DeadlockDetected(f"no agent can progress; unfinished: {', '.join(missing)}")
        return self.trace, compute_metrics(self.trace)

    def _policy(self, deadline: bool) -> bool:
        p = self.config.replan_policy
        if p is ReplanPolicy.BOTH:
            return True
        return p is (ReplanPolicy.ON_DEADLINE_MISS if deadline else ReplanPolicy.ON_FAILURE)

    def _dispatch(self, t: float) -> None:
        if t < self.frozen_until - 1e-12:
            return
        for w in (Worker.ROBOT, Worker.HUMAN):
            if w in self.running or not self.pending[w]:
                continue
            task = self.pending[w][0]
            if not self.preds.get(task, set()) <= self.completed:
                continue
            if self.mode == "rigid":
                at = self.base + self.planned[task].start
                if at > t + 1e-9:
                    self._push(at, "dispatch")
                    continue
            self.pending[w].pop(0)
            if w is Worker.HUMAN:
                self._start_human(task, t)
            else:
                self._start_robot(task, t)

    # -- human --------------------------------------------------------------------------
    def _sample_human_duration(self, task: str) -> float:
        d = self.problem.task(task).durations[Worker.HUMAN]
        mid, delta = d.midpoint, self.config.human_delta
        return float(self.rng.uniform(max(0.0, mid - delta), mid + delta))

    def _start_human(self, task: str, t: float) -> None:
        tdef = self.problem.task(task)
        start = Configuration(self.human_cell)
        path = [self.human_cell]
        try:
            graph = get_goals_from_scene(PICK_AND_PLACE, self.scene, tdef, start=start)
            blocked = self.scene.blocked() - {self.human_cell}
            q = start
            for i, layer in enumerate(graph.layers[1:], 1):
                leg = multi_goal_plan(self.ws, q, layer, "exact", blocked)
                path.extend(c.cell for c in leg.waypoints[1:])
                label = graph.labels[i]
                if label.endswith("_cube"):
                    ax, ay = leg.end.cell
                    cube = sorted(c for c in self.scene.available(label) if abs(c[0] - ax) + abs(c[1] - ay) == 1)[0]
                    self.scene.take(label, cube)
                q = leg.end
        except MotionError as exc:
            raise SimError(f"human cannot reach the objects of {task}: {exc}") from None
        dur = self._sample_human_duration(task)
        self.human_task = _HumanTask(task, t, dur, path)
        self.running[Worker.HUMAN] = self.human_task
        self.durations_realized[task] = dur
        self.trace.add(t, "TaskStart", "human", task)
        self._push(t + dur, "human_end")

    def human_position(self, t: float):
        if self.human_task is not None:
            return self.human_task.cell_at(t)
        return self.human_cell

    # -- robot --------------------------------------------------------------------------
    def _start_robot(self, task: str, t: float) -> None:
        tdef = self.problem.task(task)
        cfg = self.config
        mode = "exact" if cfg.motion_mode == "exact" else Sampling(cfg.seed, cfg.sampling_iterations)
        try:
            ref = refine_task_to_motion(self.scene, PICK_AND_PLACE, tdef, Configuration(self.robot_cell), mode,
                                        cfg.strategy, static_blocked=self.static_blocked)
        except MotionFailure as exc:
            self.trace.add(t, "TaskStart", "robot", task)
            self.trace.add(t, "Failure", "robot", task, {"layer": exc.layer})
            self.forbidden.setdefault(task, set()).add(Worker.ROBOT)
            if self._policy(deadline=False):
                self._replan(t, reason="failure", task=task, failed=task)
            return
        for label, cell in ref.picked.items():
            self.scene.take(label, cell)
        steps = []
        for plan in ref.plans:
            steps.extend(("move", q.cell) for q in plan.waypoints[1:])
            steps.extend(("grip", op) for _, op in plan.gripper_ops)
        self.robot_task = _RobotTask(task, t, steps)
        self.running[Worker.ROBOT] = self.robot_task
        self.trace.add(t, "TaskStart", "robot", task)
        self._push(t, "robot_step")

    def _robot_step(self, t: float) -> None:
        rt = self.robot_task
        if rt is None:
            return
        if rt.index >= len(rt.steps):
            self._finish(Worker.ROBOT, t)
            return
        kind, arg = rt.steps[rt.index]
        rt.index += 1
        if kind == "grip":
            self._push(t + self.ws.gripper_time, "robot_step")
            return
        human = self.human_position(t)
        near = _within(self.robot_cell, human, self.ws.safety_radius)
        if near and not self.holding:
            self.holding = True
            self.trace.add(t, "SafetyHoldStart", "robot", rt.task,
                           {"robot": list(self.robot_cell), "human": list(human)})
        elif not near and self.holding:
            self.holding = False
            self.trace.add(t, "SafetyHoldEnd", "robot", rt.task)
        speed = self.ws.robot_speed * (self.ws.slowdown_factor if near else 1.0)
        if speed <= 0:
            # full stop: wait and retry the same step
            rt.index -= 1
            self._push(t + self.config.time_step, "robot_step")
            return
        self.robot_cell = arg
        self._push(t + 1.0 / speed, "robot_step")

    # -- completion and replanning ------------------------------------------------------
    def _finish(self, w: Worker, t: float) -> None:
        if w is Worker.ROBOT:
            task = self.robot_task.task
            if self.holding:
                self.holding = False
                self.trace.add(t, "SafetyHoldEnd", "robot", task)
            self.durations_realized[task] = t - self.robot_task.start
            self.robot_task = None
        else:
            task = self.human_task.task
            self.human_cell = self.human_task.path[-1]
            self.human_task = None
        del self.running[w]
        self.completed.add(task)
        self.trace.add(t, "TaskEnd", w.value, task, {"duration": self.durations_realized[task]})
        self._push(t, "dispatch")

    def _replan(self, t: float, reason: str, task: str | None = None, failed: str | None = None) -> None:
        self.replans += 1
        if self.replans > self.config.max_replans:
            raise ReplanBudgetExhausted(f"more than {self.config.max_replans} replans")
        self.trace.add(t, "Replan", None, task, {"reason": reason, "count": self.replans})
        self.epoch += 1
        lat = self.config.replan_latency
        busy = set(self.completed) | {r.task for r in self.running.values()}
        release = {}
        for w in Worker:
            r = self.running.get(w)
            if r is None:
                release[w.value] = lat
            else:
                planned = self.planned.get(r.task)
                expect = planned.duration.max if planned is not None else 0.0
                release[w.value] = max(lat, r.start + expect - t)
        residual = residual_problem(self.problem, busy, release)
        residual = _forbid(residual, self.forbidden)
        mode = self.plan.mode
        if not residual.tasks:
            new = SolutionPlan((), {}, {}, self.plan.cost, (), mode)
        else:
            try:
                new = synthesize_plan(residual, mode=mode, search=self.config.replan_search)
            except PlanningError as exc:
                raise DeadlockDetected(f"replanning failed: {exc}") from None
        self.frozen_until = t + lat
        self._adopt(new, t)
        self._push(t + lat, "dispatch")


def _forbid(problem: ProblemSpec, forbidden: dict) -> ProblemSpec:
    """Drop workers that already failed a task, when another worker can take it."""
    if not forbidden:
        return problem
    from dataclasses import replace

    tasks = []
    svs = {sv.id: sv for sv in problem.state_variables}
    changed_sv: dict = {}
    for t in problem.tasks:
        bad = forbidden.get(t.id, set())
        keep = frozenset(t.allowed_workers - bad)
        if bad and keep and keep != t.allowed_workers:
            tasks.append(replace(t, allowed_workers=keep, durations={w: t.durations[w] for w in keep},
                                 action_template=t.action_template if Worker.ROBOT in keep else None))
            for w in bad:
                sv = problem.behavior_sv(w)
                if sv is not None:
                    changed_sv.setdefault(sv.id, set()).add(t.id)
        else:
            tasks.append(t)
    new_svs = []
    for sv in problem.state_variables:
        drop = changed_sv.get(sv.id)
        if not drop:
            new_svs.append(sv)
            continue
        vals = tuple(v for v in sv.values if v not in drop)
        new_svs.append(replace(
            sv, values=vals,
            transitions={v: frozenset(s for s in sv.transitions[v] if s in vals) for v in vals},
            durations={v: sv.durations[v] for v in vals},
            controllability={v: sv.controllability[v] for v in vals},
        ))
    robot = [t.id for t in tasks if Worker.ROBOT in t.allowed_workers]
    human = [t.id for t in tasks if Worker.HUMAN in t.allowed_workers]
    return replace(problem, tasks=tuple(tasks), state_variables=tuple(new_svs),
                   synergy=problem.synergy.restricted(robot, human))


def simulate(plan: SolutionPlan, problem: ProblemSpec, workspace=None, config: SimConfig = SimConfig()):
    """Execute ``plan``; returns (trace, metrics)."""
    sim = Simulator(problem, plan, config, workspace)
    return sim.run()


# -- synergy estimation -------------------------------------------------------------------


def _robot_run(ws, scene, task, human: _HumanTask | None) -> float:
    """Duration of one robot action from its home, slowed near the human path."""
    ref = refine_task_to_motion(scene, PICK_AND_PLACE, task, Configuration(ws.home("robot")), "exact")
    t = 0.0
    cell = ws.home("robot")
    for plan in ref.plans:
        for q in plan.waypoints[1:]:
            near = human is not None and _within(cell, human.cell_at(t), ws.safety_radius)
            t += 1.0 / (ws.robot_speed * (ws.slowdown_factor if near else 1.0))
            cell = q.cell
        t += len(plan.gripper_ops) * ws.gripper_time
    return t


def _human_path(ws, scene, task) -> list:
    start = Configuration(ws.home("human"))
    graph = get_goals_from_scene(PICK_AND_PLACE, scene, task, start=start)
    blocked = scene.blocked() - {start.cell}
    path, q = [start.cell], start
    for layer in graph.layers[1:]:
        leg = multi_goal_plan(ws, q, layer, "exact", blocked)
        path.extend(c.cell for c in leg.waypoints[1:])
        q = leg.end
    return path


def estimate_synergy_matrix(problem: ProblemSpec, workspace=None, samples: int = 3, seed: int = 0,
                            human_delta: float = 5.0) -> SynergyMatrix:
    """Monte-Carlo synergy: mean change of both workers' durations when run together.

    Both workers start from their homes. The human's duration is sampled with
    common random numbers across pairs; it is not affected by the robot, so
    only the robot's slowdown contributes.
    """
    ws = workspace or problem.workspace
    if samples < 1:
        raise ValueError("samples must be >= 1")
    robot = [t.id for t in problem.tasks if Worker.ROBOT in t.allowed_workers]
    human = [t.id for t in problem.tasks if Worker.HUMAN in t.allowed_workers]
    tasks = problem.task_map
    scene = Scene(ws)
    rng = np.random.default_rng(seed)
    draws = rng.random((samples, len(human)))
    solo = {r: _robot_run(ws, scene, tasks[r], None) for r in robot}
    paths = {h: _human_path(ws, scene, tasks[h]) for h in human}
    m = SynergyMatrix(robot, human)
    for j, h in enumerate(human):
        d = tasks[h].durations[Worker.HUMAN]
        lo, hi = max(0.0, d.midpoint - human_delta), d.midpoint + human_delta
        runs = [_HumanTask(h, 0.0, lo + (hi - lo) * draws[k, j], paths[h]) for k in range(samples)]
        for r in robot:
            if r == h:
                continue
            together = [_robot_run(ws, scene, tasks[r], hum) for hum in runs]
            m.set(r, h, round(float(np.mean(together)) - solo[r], 9))
    return m


def replay_precedences(trace: ExecutionTrace, plan: SolutionPlan) -> list:
    """Plan precedences violated by a trace (a task starting before its predecessor ended)."""
    start, end = {}, {}
    for e in trace.events:
        if e.kind == "TaskStart" and e.task not in start:
            start[e.task] = e.time
        elif e.kind == "TaskEnd":
            end[e.task] = e.time
    toks = {t.id: t.value for t in plan.tokens}
    bad = []
    for a, b in plan.precedences:
        va, vb = toks[a], toks[b]
        if va in end and vb in start and start[vb] < end[va] - 1e-9:
            bad.append((va, vb))
    return bad
