"""Brute-force references used to check the planner and the motion layer.

The assignment model uses explicit binary matrices: b_R[i, j] = 1 when the
robot runs task i in interaction window j, likewise b_H for the human. Each
worker runs exactly one task per window (an explicit idle no-op fills the
gaps) and every task is run exactly once.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .model import INCOMPATIBLE, Controllability, CostVector, SynergyMatrix, Worker

MAX_TASKS = 10
IDLE = "__idle__"


class TooLarge(ValueError):
    pass


class IncompatiblePairScheduled(ValueError):
    pass


@dataclass(frozen=True)
class AssignmentMatrix:
    b_R: frozenset  # (task, window) pairs set to 1
    b_H: frozenset
    windows: tuple

    def worker_of(self, task: str) -> Worker | None:
        for t, _ in self.b_R:
            if t == task:
                return Worker.ROBOT
        for t, _ in self.b_H:
            if t == task:
                return Worker.HUMAN
        return None

    def slot(self, worker: Worker, window: int) -> str:
        b = self.b_R if worker is Worker.ROBOT else self.b_H
        for t, j in b:
            if j == window:
                return t
        return IDLE

    def sequence(self, worker: Worker) -> list:
        b = self.b_R if worker is Worker.ROBOT else self.b_H
        return [t for t, _ in sorted(b, key=lambda p: p[1])]

    def padded(self, extra: int) -> "AssignmentMatrix":
        n = len(self.windows)
        return AssignmentMatrix(self.b_R, self.b_H, self.windows + tuple(range(n, n + extra)))

    def check(self, tasks: Iterable[str], capable: Mapping[str, frozenset], allow_idle: bool = True) -> None:
        """Replay the window-exclusivity and unique-assignment constraints."""
        tasks = list(tasks)
        for b in (self.b_R, self.b_H):
            per_window = {}
            for t, j in b:
                per_window[j] = per_window.get(j, 0) + 1
            for j in self.windows:
                n = per_window.get(j, 0)
                if n > 1 or (not allow_idle and n != 1):
                    raise AssertionError(f"window {j} holds {n} tasks")
        for t in tasks:
            count = sum(1 for u, _ in self.b_R if u == t) + sum(1 for u, _ in self.b_H if u == t)
            if count != 1:
                raise AssertionError(f"task {t} assigned {count} times")
            w = self.worker_of(t)
            if w not in capable[t]:
                raise AssertionError(f"task {t} given to incapable {w}")

    def to_json(self) -> dict:
        return {
            "windows": list(self.windows),
            "robot": [self.slot(Worker.ROBOT, j) for j in self.windows],
            "human": [self.slot(Worker.HUMAN, j) for j in self.windows],
        }


def enumerate_assignments(tasks, capable: Mapping[str, frozenset], max_windows: int,
                          allow_idle: bool = True) -> Iterator[AssignmentMatrix]:
    """Every matrix satisfying window exclusivity, unique assignment and capability.

    Tasks are placed in the given order onto free (worker, window) slots,
    slots ordered robot-first then by window, so the stream is deterministic.
    """
    tasks = list(tasks)
    if len(tasks) > MAX_TASKS:
        raise TooLarge(f"{len(tasks)} tasks exceed the enumeration guard of {MAX_TASKS}")
    windows = tuple(range(max_windows))
    slots = [(w, j) for w in (Worker.ROBOT, Worker.HUMAN) for j in windows]
    if not allow_idle and len(tasks) != len(slots):
        return

    def rec(i, used, chosen):
        if i == len(tasks):
            b_R = frozenset((t, j) for t, (w, j) in chosen if w is Worker.ROBOT)
            b_H = frozenset((t, j) for t, (w, j) in chosen if w is Worker.HUMAN)
            yield AssignmentMatrix(b_R, b_H, windows)
            return
        t = tasks[i]
        for slot in slots:
            if slot in used or slot[0] not in capable[t]:
                continue
            used.add(slot)
            chosen.append((t, slot))
            yield from rec(i + 1, used, chosen)
            chosen.pop()
            used.discard(slot)

    yield from rec(0, set(), [])


def count_assignments_closed_form(n_tasks: int, max_windows: int) -> int:
    """Matrices for ``n_tasks`` dual-capable tasks with idle allowed: injective maps into 2W slots."""
    slots = 2 * max_windows
    if n_tasks > slots:
        return 0
    return math.perm(slots, n_tasks)


def _synergy(synergy: SynergyMatrix | None, r: str, h: str):
    if synergy is None or r == IDLE or h == IDLE:
        return 0.0
    if r not in synergy.robot_tasks or h not in synergy.human_tasks:
        return 0.0
    return synergy.lookup(r, h)


def oracle_costs(m: AssignmentMatrix, durations: Mapping[str, Mapping[Worker, float]],
                 synergy: SynergyMatrix | None = None, objective: str = "literal") -> CostVector:
    """Cost pair of an assignment matrix.

    ``literal``: f_d is the total work (sum of durations over both workers)
    and f_s sums s over robot/human tasks sharing a window.
    ``timeline``: each worker runs its tasks back to back in window order;
    f_d is the makespan and f_s sums s over pairs whose executions intersect.
    """
    if objective == "literal":
        fd = sum(durations[t][Worker.ROBOT] for t, _ in m.b_R) + sum(durations[t][Worker.HUMAN] for t, _ in m.b_H)
        fs = 0.0
        for j in m.windows:
            r, h = m.slot(Worker.ROBOT, j), m.slot(Worker.HUMAN, j)
            s = _synergy(synergy, r, h)
            if s is INCOMPATIBLE:
                raise IncompatiblePairScheduled(f"{r} and {h} share window {j}")
            fs += s
        return CostVector(float(fd), float(fs))
    if objective != "timeline":
        raise ValueError(f"unknown objective {objective!r}")
    spans = {}
    for w in (Worker.ROBOT, Worker.HUMAN):
        t0 = 0.0
        spans[w] = []
        for t in m.sequence(w):
            d = durations[t][w]
            spans[w].append((t, t0, t0 + d))
            t0 += d
    fd = max((s[-1][2] for s in spans.values() if s), default=0.0)
    fs = 0.0
    for r, rs, re_ in spans[Worker.ROBOT]:
        for h, hs, he in spans[Worker.HUMAN]:
            if rs < he - 1e-9 and hs < re_ - 1e-9:
                s = _synergy(synergy, r, h)
                if s is INCOMPATIBLE:
                    raise IncompatiblePairScheduled(f"{r} overlaps {h}")
                fs += s
    return CostVector(float(fd), float(fs))


def dominates(a: CostVector, b: CostVector) -> bool:
    return a.f_d < b.f_d and a.f_s < b.f_s


def oracle_pareto(tasks, capable, durations, synergy=None, objective: str = "literal",
                  max_windows: int | None = None) -> list:
    """Exact Pareto set: one representative matrix per non-dominated cost pair."""
    tasks = list(tasks)
    if len(tasks) > MAX_TASKS:
        raise TooLarge(f"{len(tasks)} tasks exceed the enumeration guard of {MAX_TASKS}")
    windows = len(tasks) if max_windows is None else max_windows
    by_cost: dict = {}
    for m in enumerate_assignments(tasks, capable, windows):
        try:
            c = oracle_costs(m, durations, synergy, objective)
        except IncompatiblePairScheduled:
            continue
        by_cost.setdefault((c.f_d, c.f_s), (m, c))
    members = list(by_cost.values())
    return [(m, c) for m, c in members if not any(dominates(o, c) for _, o in members)]


def select_min_fs_first(pareto: list):
    """Lowest f_s, then lowest f_d."""
    return min(pareto, key=lambda mc: (mc[1].f_s, mc[1].f_d))


def problem_inputs(problem, effective: bool = True):
    """(tasks, capable, durations) of a problem as the oracle expects them.

    With ``effective`` the duration of uncontrollable or partially
    controllable values is their maximum, matching the planner's bounding;
    otherwise the interval midpoint is used.
    """
    tasks = [t.id for t in problem.tasks]
    capable = {t.id: frozenset(t.allowed_workers) for t in problem.tasks}
    durations = {}
    for t in problem.tasks:
        durations[t.id] = {}
        for w in t.allowed_workers:
            sv = problem.behavior_sv(w)
            d = sv.durations[t.id]
            tag = sv.controllability[t.id]
            if effective:
                durations[t.id][w] = d.min if tag is Controllability.CONTROLLABLE else d.max
            else:
                durations[t.id][w] = d.midpoint
    return tasks, capable, durations


def makespan_upper_bound(problem) -> float:
    """Worst makespan over every assignment: each worker doing everything it may."""
    tasks, capable, durations = problem_inputs(problem)
    best = 0.0
    for w in (Worker.ROBOT, Worker.HUMAN):
        if problem.behavior_sv(w) is None:
            continue
        best = max(best, problem.release_of(w) + sum(durations[t][w] for t in tasks if w in capable[t]))
    return best


def bfs_distance(workspace, start, goal, blocked=frozenset()) -> float:
    """Breadth-first grid distance, independent of the Dijkstra implementations."""
    if goal == start:
        return 0.0
    seen = {start}
    q = deque([(start, 0)])
    while q:
        (x, y), d = q.popleft()
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if n in seen or not workspace.in_bounds(n) or n in workspace.obstacles or n in blocked:
                continue
            if n == goal:
                return float(d + 1)
            seen.add(n)
            q.append((n, d + 1))
    return math.inf


def min_over_goals(workspace, start, goals, blocked=frozenset()) -> float:
    return min((bfs_distance(workspace, start, g, blocked) for g in goals), default=math.inf)


def brute_force_schedule_overlaps(spans_r, spans_h) -> list:
    return [(r, h) for (r, rs, re_) in spans_r for (h, hs, he) in spans_h if rs < he - 1e-9 and hs < re_ - 1e-9]


def all_interleavings(tasks, capable) -> Iterator[dict]:
    """Every (assignment, per-worker order) pair; a second route to the timeline objective."""
    tasks = list(tasks)
    options = [sorted(capable[t]) for t in tasks]
    for choice in itertools.product(*options):
        per = {Worker.ROBOT: [], Worker.HUMAN: []}
        for t, w in zip(tasks, choice):
            per[w].append(t)
        for r in itertools.permutations(per[Worker.ROBOT]):
            for h in itertools.permutations(per[Worker.HUMAN]):
                yield {Worker.ROBOT: list(r), Worker.HUMAN: list(h)}
