"""Timeline-based plan synthesis.

Partial plans are refined by resolving flaws (missing supporting tokens or
possibly overlapping tokens) and selected from a fringe by Pareto dominance
over the cost pair (f_d, f_s), with synergy taking priority.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .domain import ProblemSpec
from .model import (
    INCOMPATIBLE,
    Controllability,
    CostVector,
    DurationInterval,
    Relation,
    Worker,
)
from .temporal import EPS, STN

AUTO_EXACT_LIMIT = 6
DEFAULT_FRINGE_CAP = 10_000


class PlanningError(RuntimeError):
    def __init__(self, msg: str, stats: dict | None = None):
        super().__init__(msg)
        self.stats = stats or {}


class PlanningTimeout(PlanningError):
    pass


class Infeasible(PlanningError):
    pass


class InconsistentPlan(PlanningError):
    pass


class EmptyFringe(PlanningError):
    pass


@dataclass(frozen=True)
class PlanToken:
    id: int
    state_variable: str
    value: str
    worker: Worker | None
    duration: DurationInterval
    tag: Controllability

    @property
    def effective_duration(self) -> float:
        # uncontrollable and partially controllable tokens are bounded by their maximum
        return self.duration.min if self.tag is Controllability.CONTROLLABLE else self.duration.max


@dataclass(frozen=True, order=True)
class Flaw:
    rank: int
    kind: str  # "planning" | "scheduling"
    token: int
    index: int  # (rule, requirement) position for planning flaws, second token for scheduling ones
    state_variable: str = field(compare=False)
    rule: int | None = field(default=None, compare=False)
    requirement: int | None = field(default=None, compare=False)
    other: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Resolver:
    kind: str  # "add_token" | "link" | "order"
    state_variable: str | None = None
    value: str | None = None
    relation: Relation | None = None
    worker: Worker | None = None
    first: int | None = None
    second: int | None = None


class PartialPlan:
    """Immutable search node. The STN is stored as a delta over the parent."""

    __slots__ = ("seq", "parent", "tokens", "timelines", "assignment", "supported",
                 "ops", "cost", "parts", "depth", "orders")

    def __init__(self, seq, parent, tokens, timelines, assignment, supported, ops, depth, orders=frozenset()):
        self.seq = seq
        self.parent = parent
        self.tokens = tokens
        self.timelines = timelines
        self.assignment = assignment
        self.supported = supported
        self.ops = ops
        self.depth = depth
        self.orders = orders
        self.cost: CostVector | None = None
        self.parts: dict = {}

    def signature(self) -> tuple:
        tl = tuple(sorted((sv, tuple(self.tokens[i].value for i in ids)) for sv, ids in self.timelines.items()))
        return tl, frozenset(self.supported), self.orders

    def __repr__(self) -> str:
        return f"PartialPlan(seq={self.seq}, depth={self.depth}, cost={self.cost})"


def dominates(a: CostVector, b: CostVector) -> bool:
    """Strict dominance on every objective."""
    return a.f_d < b.f_d and a.f_s < b.f_s


def pareto_set(items: Iterable, key=lambda x: x):
    items = list(items)
    return [x for x in items if not any(dominates(key(y), key(x)) for y in items if y is not x)]


def choose_plan(fringe: list) -> "PartialPlan":
    """Remove and return the preferred plan of ``fringe``.

    Among Pareto members the lowest f_s wins, then the lowest f_d, then the
    most recently inserted plan.
    """
    if not fringe:
        raise EmptyFringe("fringe is empty")
    front = pareto_set(fringe, key=lambda p: p.cost)
    best = min(front, key=lambda p: (p.cost.f_s, p.cost.f_d, -p.seq))
    fringe.remove(best)
    return best


@dataclass(frozen=True)
class PlannedToken:
    id: int
    state_variable: str
    value: str
    worker: Worker | None
    start: float
    end: float
    latest_end: float
    duration: DurationInterval
    tag: Controllability

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "state_variable": self.state_variable,
            "value": self.value,
            "worker": self.worker.value if self.worker else None,
            "start": self.start,
            "end": self.end,
            "latest_end": self.latest_end,
            "duration": self.duration.to_json(),
            "tag": self.tag.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PlannedToken":
        return cls(
            int(d["id"]), d["state_variable"], d["value"], Worker(d["worker"]) if d.get("worker") else None,
            float(d["start"]), float(d["end"]), float(d["latest_end"]),
            DurationInterval.from_json(d["duration"]), Controllability(d["tag"]),
        )


@dataclass
class SolutionPlan:
    tokens: tuple
    timelines: dict  # state variable -> token ids in execution order
    assignment: dict  # task -> Worker
    cost: CostVector
    precedences: tuple = ()  # (a, b): behavior token a must end before b starts
    mode: str = "flexible"
    stats: dict = field(default_factory=dict)

    @property
    def makespan(self) -> float:
        ends = [t.end for t in self.tokens if t.worker is not None]
        return max(ends, default=0.0)

    def token(self, token_id: int) -> PlannedToken:
        return self.tokens[self._index()[token_id]]

    def _index(self) -> dict:
        return {t.id: i for i, t in enumerate(self.tokens)}

    def task_tokens(self) -> dict:
        return {t.value: t for t in self.tokens if t.worker is not None}

    def sequence(self, worker: Worker) -> list:
        idx = self._index()
        for ids in self.timelines.values():
            toks = [self.tokens[idx[i]] for i in ids]
            if toks and toks[0].worker == worker:
                return [t.value for t in toks]
        return []

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "cost": {"f_d": self.cost.f_d, "f_s": self.cost.f_s},
            "makespan": self.makespan,
            "assignment": {k: w.value for k, w in sorted(self.assignment.items())},
            "timelines": {
                sv: [self.token(i).to_json() for i in ids] for sv, ids in sorted(self.timelines.items())
            },
            "precedences": [list(p) for p in self.precedences],
            "stats": self.stats,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SolutionPlan":
        tokens, timelines = [], {}
        for sv, toks in d["timelines"].items():
            parsed = [PlannedToken.from_json(t) for t in toks]
            tokens.extend(parsed)
            timelines[sv] = tuple(t.id for t in parsed)
        tokens.sort(key=lambda t: t.id)
        return cls(
            tuple(tokens),
            timelines,
            {k: Worker(v) for k, v in d["assignment"].items()},
            CostVector(float(d["cost"]["f_d"]), float(d["cost"]["f_s"])),
            tuple(tuple(p) for p in d.get("precedences", ())),
            d.get("mode", "flexible"),
            dict(d.get("stats", {})),
        )


def rigidify(problem: ProblemSpec) -> ProblemSpec:
    """Durations collapsed to midpoints and every worker value made controllable."""
    tasks = tuple(replace(t, durations={w: d.collapsed() for w, d in t.durations.items()}) for t in problem.tasks)
    svs = []
    for sv in problem.state_variables:
        if sv.kind == "production":
            svs.append(sv)
            continue
        svs.append(replace(
            sv,
            durations={v: d.collapsed() for v, d in sv.durations.items()},
            controllability={v: Controllability.CONTROLLABLE for v in sv.values},
        ))
    return replace(problem, tasks=tasks, state_variables=tuple(svs))


class Planner:
    """Refinement search over partial plans.

    ``search`` selects how the projections of the cost estimators are built:

    * ``"greedy"`` projects every still-unassigned task onto each timeline
      able to run it (a worst-case bag) and resolves only the top-ranked flaw
      per iteration. Cheap and fast but not optimal.
    * ``"exact"`` uses projections that never overestimate (mandatory tasks
      per timeline plus a load-balancing bound) and branches on every flaw of
      the top hierarchy tier, so the first flaw-free plan extracted is
      lexicographically optimal in (f_s, f_d).
    * ``"auto"`` picks ``"exact"`` for problems of at most
      ``AUTO_EXACT_LIMIT`` tasks.
    """

    def __init__(self, problem: ProblemSpec, mode: str = "flexible", search: str = "auto",
                 fringe_cap: int = DEFAULT_FRINGE_CAP, append: bool = True, cache_size: int = 256):
        if mode not in ("flexible", "rigid"):
            raise ValueError(f"unknown mode {mode!r}")
        if search not in ("auto", "exact", "greedy"):
            raise ValueError(f"unknown search {search!r}")
        self.mode = mode
        self.problem = rigidify(problem) if mode == "rigid" else problem
        p = self.problem
        if search == "auto":
            search = "exact" if len(p.tasks) <= AUTO_EXACT_LIMIT else "greedy"
        self.search = search
        self.fringe_cap = fringe_cap
        self.append = append
        self.tasks = p.task_map
        self.svs = p.sv_map
        self.behavior = {}
        for sv in p.state_variables:
            if sv.kind == "behavior":
                self.behavior[sv.worker] = sv
        self.sv_worker = {sv.id: w for w, sv in self.behavior.items()}
        trigger_svs = {r.trigger[0] for r in p.rules}
        self.rank = {sv.id: (0 if sv.id in trigger_svs else 1) for sv in p.state_variables}
        self.rules_for: dict = {}
        for i, r in enumerate(p.rules):
            self.rules_for.setdefault(r.trigger, []).append(i)
        self.synergy = p.synergy
        self._robot_ok = set(p.synergy.robot_tasks)
        self._human_ok = set(p.synergy.human_tasks)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._seq = itertools.count()
        self.root: PartialPlan | None = None
        self.stats = {"expansions": 0, "generated": 0, "pruned": 0, "duplicates": 0,
                      "fringe_peak": 0, "evicted": 0}

    # -- STN materialization ----------------------------------------------------------
    def _apply(self, stn: STN, op) -> bool:
        kind = op[0]
        if kind == "token":
            tok: PlanToken = op[1]
            s, e = stn.add_token_constraints(_as_model_token(tok))
            ok = stn.consistent
            rel = self.problem.release_of(tok.worker) if tok.worker else 0.0
            if rel > 0:
                ok = stn.add_constraint(0, s, rel, math.inf)
            return ok
        if kind == "before":
            return stn.before(op[1], op[2])
        if kind == "meets":
            return stn.meets(op[1], op[2])
        if kind == "contains":
            return stn.contains(op[1], op[2])
        raise ValueError(kind)

    def stn(self, plan: PartialPlan) -> STN:
        hit = self._cache.get(plan.seq)
        if hit is not None:
            self._cache.move_to_end(plan.seq)
            return hit
        base = STN(self.problem.horizon) if plan.parent is None else self.stn(plan.parent).copy()
        for op in plan.ops:
            self._apply(base, op)
        self._remember(plan, base)
        return base

    def _remember(self, plan: PartialPlan, stn: STN) -> None:
        self._cache[plan.seq] = stn
        self._cache.move_to_end(plan.seq)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)

    # -- construction ------------------------------------------------------------------
    def _new_token(self, tid: int, sv_id: str, value: str) -> PlanToken:
        sv = self.svs[sv_id]
        return PlanToken(tid, sv_id, value, sv.worker, sv.durations[value], sv.controllability[value])

    def initialize(self) -> PartialPlan:
        """Root plan: one token per production value, with links between them."""
        tokens, timelines, ops = [], {}, []
        for sv in self.problem.production_svs:
            ids = []
            for v in sv.values:
                tok = self._new_token(len(tokens), sv.id, v)
                tokens.append(tok)
                ids.append(tok.id)
                ops.append(("token", tok))
            timelines[sv.id] = tuple(ids)
        for w, sv in sorted(self.behavior.items()):
            timelines[sv.id] = ()
        supported = set()
        by_value = {}
        for t in tokens:
            by_value.setdefault((t.state_variable, t.value), []).append(t.id)
        for t in tokens:
            for ri in self.rules_for.get((t.state_variable, t.value), []):
                for qi, req in enumerate(self.problem.rules[ri].requirements):
                    if req.state_variable is not None and (req.state_variable, req.value) in by_value:
                        other = by_value[(req.state_variable, req.value)][0]
                        ops.append(_relation_op(req.relation, t.id, other))
                        supported.add((t.id, ri, qi))
        root = PartialPlan(next(self._seq), None, tuple(tokens), timelines, {}, frozenset(supported), tuple(ops), 0)
        stn = STN(self.problem.horizon)
        for op in root.ops:
            if not self._apply(stn, op):
                raise Infeasible("initial constraints are inconsistent", dict(self.stats))
        self._remember(root, stn)
        self._evaluate(root, stn)
        self.root = root
        return root

    # -- flaws -------------------------------------------------------------------------
    def detect_flaws(self, plan: PartialPlan) -> list:
        flaws = []
        rules = self.problem.rules
        for t in plan.tokens:
            for ri in self.rules_for.get((t.state_variable, t.value), []):
                for qi, _ in enumerate(rules[ri].requirements):
                    if (t.id, ri, qi) not in plan.supported:
                        flaws.append(Flaw(self.rank[t.state_variable], "planning", t.id, ri * 10_000 + qi,
                                          t.state_variable, ri, qi))
        stn = None
        for sv_id, ids in plan.timelines.items():
            if sv_id not in self.sv_worker or len(ids) < 2:
                continue
            if stn is None:
                stn = self.stn(plan)
            for a, b in itertools.combinations(sorted(ids), 2):
                if stn.may_overlap(a, b):
                    flaws.append(Flaw(self.rank[sv_id], "scheduling", a, b, sv_id, other=b))
        flaws.sort(key=lambda f: (f.rank, 0 if f.kind == "planning" else 1, f.token, f.index))
        return flaws

    def choose_flaws(self, flaws: list) -> list:
        if not flaws:
            return []
        top = flaws[0].rank
        tier = [f for f in flaws if f.rank == top]
        return tier if self.search == "exact" else tier[:1]

    def resolvers(self, plan: PartialPlan, flaw: Flaw) -> list:
        if flaw.kind == "scheduling":
            return [Resolver("order", first=flaw.token, second=flaw.other),
                    Resolver("order", first=flaw.other, second=flaw.token)]
        req = self.problem.rules[flaw.rule].requirements[flaw.requirement]
        out = []
        if req.value in self.tasks:
            task = self.tasks[req.value]
            placed = [t.id for t in plan.tokens if t.value == req.value and t.worker is not None]
            if placed:
                # already assigned: support it with the existing token, never a second one
                return [Resolver("link", value=req.value, relation=req.relation, first=flaw.token, second=placed[0])]
            for w in sorted(task.allowed_workers):
                sv = self.behavior.get(w)
                if sv is None or req.value not in sv.values:
                    continue
                if req.state_variable is not None and req.state_variable != sv.id:
                    continue
                out.append(Resolver("add_token", sv.id, req.value, req.relation, w, first=flaw.token))
            return out
        existing = [t.id for t in plan.tokens if t.state_variable == req.state_variable and t.value == req.value]
        for other in existing:
            out.append(Resolver("link", req.state_variable, req.value, req.relation, first=flaw.token, second=other))
        if not existing:
            out.append(Resolver("add_token", req.state_variable, req.value, req.relation, first=flaw.token))
        return out

    def refine(self, plan: PartialPlan, flaw: Flaw) -> list:
        children = []
        for res in self.resolvers(plan, flaw):
            child = self._apply_resolver(plan, flaw, res)
            if child is not None:
                children.append(child)
        return children

    def _apply_resolver(self, plan: PartialPlan, flaw: Flaw, res: Resolver) -> PartialPlan | None:
        tokens = plan.tokens
        timelines = dict(plan.timelines)
        assignment = dict(plan.assignment)
        supported = set(plan.supported)
        orders = plan.orders
        ops = []
        if res.kind == "order":
            ops.append(("before", res.first, res.second))
            orders = orders | {(res.first, res.second)}
        elif res.kind == "link":
            ops.append(_relation_op(res.relation, res.first, res.second))
            supported.add((flaw.token, flaw.rule, flaw.requirement))
        else:
            tok = self._new_token(len(tokens), res.state_variable, res.value)
            tokens = tokens + (tok,)
            ops.append(("token", tok))
            ops.append(_relation_op(res.relation, res.first, tok.id))
            line = timelines.get(res.state_variable, ())
            if self.append and line and tok.worker is not None:
                ops.append(("before", line[-1], tok.id))
            timelines[res.state_variable] = line + (tok.id,)
            if tok.worker is not None:
                assignment[res.value] = tok.worker
            supported.add((flaw.token, flaw.rule, flaw.requirement))
        child = PartialPlan(next(self._seq), plan, tokens, timelines, assignment, frozenset(supported),
                            tuple(ops), plan.depth + 1, orders)
        stn = self.stn(plan).copy()
        for op in ops:
            if not self._apply(stn, op):
                self.stats["pruned"] += 1
                return None
        self._evaluate(child, stn)
        if math.isinf(child.cost.f_s):
            self.stats["pruned"] += 1
            return None
        self._remember(child, stn)
        return child

    # -- costs -------------------------------------------------------------------------
    def _ordered(self, plan: PartialPlan, lb: np.ndarray, sv_id: str) -> list:
        ids = plan.timelines.get(sv_id, ())
        if self.append:
            return list(ids)
        return sorted(ids, key=lambda i: (lb[2 * i + 1], i))

    def _evaluate(self, plan: PartialPlan, stn: STN) -> CostVector:
        lb = stn.earliest_array()
        unassigned = [t for t in self.problem.tasks if t.id not in plan.assignment]
        ends = {}
        for w, sv in self.behavior.items():
            end = self.problem.release_of(w)
            for i in plan.timelines.get(sv.id, ()):
                end = max(end, float(lb[stn.token_points[i][1]]))
            ends[w] = end
        eff = {w: {v: _eff(sv, v) for v in sv.values} for w, sv in self.behavior.items()}
        if self.search == "exact":
            fd = 0.0
            total = sum(ends.values())
            for w, sv in self.behavior.items():
                forced = sum(eff[w][t.id] for t in unassigned if t.allowed_workers == {w} and t.id in eff[w])
                fd = max(fd, ends[w] + forced)
            for t in unassigned:
                opts = [eff[w][t.id] for w in t.allowed_workers if w in eff and t.id in eff[w]]
                total += min(opts) if opts else 0.0
            if len(self.behavior) > 1:
                fd = max(fd, total / len(self.behavior))
            proj_d = fd - max(ends.values(), default=0.0)
        else:
            fd = 0.0
            for w in self.behavior:
                bag = sum(eff[w][t.id] for t in unassigned if w in t.allowed_workers and t.id in eff[w])
                fd = max(fd, ends[w] + bag)
            proj_d = fd - max(ends.values(), default=0.0)
        fs_cost = self._synergy_cost(plan, stn, lb)
        fs_h = self._synergy_heuristic(plan, unassigned)
        plan.cost = CostVector(max(0.0, float(fd)), float(fs_cost + fs_h))
        plan.parts = {"fd_cost": max(ends.values(), default=0.0), "fd_projection": proj_d,
                      "fs_cost": fs_cost, "fs_projection": fs_h}
        return plan.cost

    def overlapping_pairs(self, plan: PartialPlan, stn: STN | None = None) -> list:
        """(robot token, human token) pairs whose earliest-schedule executions intersect."""
        stn = stn or self.stn(plan)
        lb = stn.earliest_array()
        return _overlaps(plan, stn, lb, self.behavior)

    def _synergy_cost(self, plan, stn, lb) -> float:
        total = 0.0
        for r, h in _overlaps(plan, stn, lb, self.behavior):
            rv, hv = plan.tokens[r].value, plan.tokens[h].value
            if rv not in self._robot_ok or hv not in self._human_ok:
                continue
            s = self.synergy.lookup(rv, hv)
            if s is INCOMPATIBLE:
                return math.inf
            total += s
        return float(total)

    def _synergy_heuristic(self, plan, unassigned) -> float:
        robot_bag = [t.id for t in unassigned if Worker.ROBOT in t.allowed_workers and t.id in self._robot_ok]
        if self.search != "exact":
            return sum(self.synergy.worst_in_row(r) for r in robot_bag)
        # lower bound: every negative pair not yet fixed may still be realized
        placed = set(plan.assignment)
        lbound = 0.0
        for (r, h), s in self.synergy.items():
            if s is INCOMPATIBLE or s >= 0:
                continue
            if r in placed and h in placed:
                continue
            lbound += s
        return lbound

    # -- search ------------------------------------------------------------------------
    def search_plan(self, budget: float | None = None, max_expansions: int | None = None,
                    trace: list | None = None) -> PartialPlan:
        t0 = time.perf_counter()
        root = self.initialize()
        heap = [(root.cost.f_s, root.cost.f_d, -root.seq, root)]
        seen = {root.signature()}
        while True:
            elapsed = time.perf_counter() - t0
            if budget is not None and elapsed >= budget:
                raise PlanningTimeout(f"budget of {budget}s exhausted", self._stats(t0, heap))
            if max_expansions is not None and self.stats["expansions"] >= max_expansions:
                raise PlanningTimeout("expansion limit reached", self._stats(t0, heap))
            if not heap:
                raise Infeasible("fringe exhausted without a solution", self._stats(t0, heap))
            _, _, _, plan = heapq.heappop(heap)
            flaws = self.detect_flaws(plan)
            if not flaws:
                self.stats.update(self._stats(t0, heap))
                return plan
            self.stats["expansions"] += 1
            if trace is not None:
                trace.append(plan)
            for flaw in self.choose_flaws(flaws):
                for child in self.refine(plan, flaw):
                    sig = child.signature()
                    if sig in seen:
                        self.stats["duplicates"] += 1
                        continue
                    seen.add(sig)
                    self.stats["generated"] += 1
                    heapq.heappush(heap, (child.cost.f_s, child.cost.f_d, -child.seq, child))
            self.stats["fringe_peak"] = max(self.stats["fringe_peak"], len(heap))
            if len(heap) > self.fringe_cap:
                heap.sort(key=lambda e: (e[1], e[0], e[2]))
                self.stats["evicted"] += len(heap) - self.fringe_cap
                del heap[self.fringe_cap:]
                heapq.heapify(heap)

    def _stats(self, t0, heap) -> dict:
        out = dict(self.stats)
        out["wall_time"] = time.perf_counter() - t0
        out["fringe_size"] = len(heap)
        if heap:
            best = min(heap, key=lambda e: (e[0], e[1], e[2]))[3]
            out["best_cost"] = [best.cost.f_d, best.cost.f_s]
        return out

    def solution(self, plan: PartialPlan) -> SolutionPlan:
        stn = self.stn(plan)
        d = stn.dist
        lb = stn.earliest_array()
        toks = []
        for t in plan.tokens:
            s, e = stn.token_points[t.id]
            start, end = float(lb[s]) + 0.0, float(lb[e]) + 0.0
            latest = end if self.mode == "rigid" else float(d[0, e])
            toks.append(PlannedToken(t.id, t.state_variable, t.value, t.worker, start, end, latest, t.duration, t.tag))
        timelines = {sv: tuple(self._ordered(plan, lb, sv)) if sv in self.sv_worker else tuple(ids)
                     for sv, ids in plan.timelines.items()}
        behavior = [t for t in plan.tokens if t.worker is not None]
        prec = []
        for a in behavior:
            ea = stn.token_points[a.id][1]
            for b in behavior:
                if a.id != b.id and d[stn.token_points[b.id][0], ea] <= EPS:
                    prec.append((a.id, b.id))
        return SolutionPlan(tuple(toks), timelines, dict(plan.assignment), plan.cost, tuple(prec), self.mode,
                            dict(self.stats))


def _eff(sv, value) -> float:
    d = sv.durations[value]
    return d.min if sv.controllability[value] is Controllability.CONTROLLABLE else d.max


def _overlaps(plan, stn, lb, behavior) -> list:
    r_sv = behavior.get(Worker.ROBOT)
    h_sv = behavior.get(Worker.HUMAN)
    if r_sv is None or h_sv is None:
        return []
    out = []
    for r in plan.timelines.get(r_sv.id, ()):
        rs, re_ = (lb[p] for p in stn.token_points[r])
        for h in plan.timelines.get(h_sv.id, ()):
            hs, he = (lb[p] for p in stn.token_points[h])
            if rs < he - EPS and hs < re_ - EPS:
                out.append((r, h))
    return out


def _relation_op(relation: Relation, trigger: int, required: int) -> tuple:
    if relation is Relation.CONTAINS:
        return ("contains", trigger, required)
    if relation is Relation.BEFORE:
        return ("before", required, trigger)
    return ("meets", required, trigger)


def _as_model_token(tok: PlanToken):
    from .model import Token

    return Token(tok.id, tok.state_variable, tok.value, (0.0, math.inf), tok.duration, tok.tag)


def synthesize_plan(problem: ProblemSpec, budget: float | None = None, mode: str = "flexible",
                    search: str = "auto", max_expansions: int | None = None,
                    fringe_cap: int = DEFAULT_FRINGE_CAP) -> SolutionPlan:
    """Run the refinement search until a flaw-free plan is extracted."""
    planner = Planner(problem, mode=mode, search=search, fringe_cap=fringe_cap)
    plan = planner.search_plan(budget=budget, max_expansions=max_expansions)
    sol = planner.solution(plan)
    sol.stats["search"] = planner.search
    return sol


def plan_from_sequences(problem: ProblemSpec, sequences: dict, mode: str = "flexible") -> SolutionPlan:
    """Build the solution that executes the given per-worker task sequences in order."""
    planner = Planner(problem, mode=mode, search="greedy")
    plan = planner.initialize()
    row_of = {}
    for ri, rule in enumerate(planner.problem.rules):
        for qi, req in enumerate(rule.requirements):
            if req.value in planner.tasks:
                row_of[req.value] = (ri, qi, rule.trigger)
    trigger_token = {(t.state_variable, t.value): t.id for t in plan.tokens}
    cursors = {w: 0 for w in sequences}
    remaining = sum(len(s) for s in sequences.values())
    # interleave round-robin so both timelines grow; the order within each is fixed
    while remaining:
        progressed = False
        for w in sorted(sequences):
            seq = sequences[w]
            if cursors[w] >= len(seq):
                continue
            task = seq[cursors[w]]
            ri, qi, trig = row_of[task]
            flaw = Flaw(0, "planning", trigger_token[trig], 0, trig[0], ri, qi)
            res = Resolver("add_token", planner.behavior[w].id, task, planner.problem.rules[ri].requirements[qi].relation,
                           w, first=trigger_token[trig])
            child = planner._apply_resolver(plan, flaw, res)
            if child is None:
                raise Infeasible(f"sequence for {w.value} is inconsistent at {task}")
            plan = child
            cursors[w] += 1
            remaining -= 1
            progressed = True
        if not progressed:
            break
    if planner.detect_flaws(plan):
        raise Infeasible("sequences do not cover every task")
    return planner.solution(plan)


def random_feasible_plan(problem: ProblemSpec, rng: np.random.Generator, mode: str = "flexible") -> SolutionPlan:
    """Baseline plan: random human workload size, random assignment and random order.

    The human's task count is uniform between the number of tasks only the
    human can do and the number it may do.
    """
    human_only = [t.id for t in problem.tasks if t.allowed_workers == {Worker.HUMAN}]
    robot_only = [t.id for t in problem.tasks if t.allowed_workers == {Worker.ROBOT}]
    shared = [t.id for t in problem.tasks if len(t.allowed_workers) == 2]
    k = int(rng.integers(len(human_only), len(human_only) + len(shared) + 1))
    picked = list(rng.permutation(len(shared))[: k - len(human_only)])
    human = human_only + [shared[i] for i in sorted(picked)]
    robot = robot_only + [s for i, s in enumerate(shared) if i not in set(picked)]
    human = [human[i] for i in rng.permutation(len(human))]
    robot = [robot[i] for i in rng.permutation(len(robot))]
    return plan_from_sequences(problem, {Worker.HUMAN: human, Worker.ROBOT: robot}, mode=mode)


def estimate_fd(planner: Planner, plan: PartialPlan) -> float:
    stn = planner.stn(plan)
    if not stn.consistent:
        raise InconsistentPlan("plan's network is inconsistent")
    return planner._evaluate(plan, stn).f_d


def estimate_fs(planner: Planner, plan: PartialPlan) -> float:
    stn = planner.stn(plan)
    if not stn.consistent:
        raise InconsistentPlan("plan's network is inconsistent")
    return planner._evaluate(plan, stn).f_s
