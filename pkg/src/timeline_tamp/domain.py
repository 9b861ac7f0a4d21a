"""Problem files and the mosaic benchmark family."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import jsonschema
import numpy as np

from .model import (
    Controllability,
    DurationInterval,
    ModelError,
    Relation,
    Requirement,
    StateVariable,
    SynchronizationRule,
    SynergyMatrix,
    TaskDef,
    Worker,
)
from .motion import (
    PICK_AND_PLACE,
    Configuration,
    MotionError,
    NoFreeApproach,
    Scene,
    Workspace,
    distance_field,
    refine_task_to_motion,
)

PRODUCTION_SV = "Production"
BEHAVIOR_SV = {Worker.ROBOT: "Robot", Worker.HUMAN: "Human"}
COLOR_WORKERS = {
    "blue": frozenset({Worker.HUMAN, Worker.ROBOT}),
    "orange": frozenset({Worker.ROBOT}),
    "white": frozenset({Worker.HUMAN}),
}
DEFAULT_HUMAN_DURATIONS = {"blue": 12.0, "white": 12.0, "orange": 12.0}
DEFAULT_DELTA = 5.0


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + loc)
        self.line = line
        self.column = column


class ValidationError(ValueError):
    def __init__(self, msg: str, symbol: str | None = None):
        super().__init__(msg)
        self.symbol = symbol


class InfeasibleSpec(ValueError):
    pass


@dataclass
class ProblemSpec:
    state_variables: tuple
    tasks: tuple
    rules: tuple
    synergy: SynergyMatrix
    horizon: float
    workspace: Workspace | None = None
    workspace_ref: str | None = None
    # earliest time each worker may start its first task (used for residual problems)
    release: dict = field(default_factory=dict)

    # -- lookups ------------------------------------------------------------------------
    @property
    def task_map(self) -> dict:
        return {t.id: t for t in self.tasks}

    @property
    def sv_map(self) -> dict:
        return {sv.id: sv for sv in self.state_variables}

    def task(self, task_id: str) -> TaskDef:
        return self.task_map[task_id]

    def behavior_sv(self, worker: Worker) -> StateVariable | None:
        for sv in self.state_variables:
            if sv.kind == "behavior" and sv.worker == worker:
                return sv
        return None

    @property
    def production_svs(self) -> list:
        return [sv for sv in self.state_variables if sv.kind == "production"]

    def tasks_for(self, worker: Worker) -> list:
        return [t.id for t in self.tasks if worker in t.allowed_workers]

    def release_of(self, worker: Worker) -> float:
        return float(self.release.get(worker.value, 0.0))

    # -- validation ---------------------------------------------------------------------
    def validate(self) -> "ProblemSpec":
        if not self.tasks:
            raise ValidationError("problem has an empty task list", "tasks")
        if not (self.horizon > 0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}", "horizon")
        ids = [t.id for t in self.tasks]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValidationError(f"duplicate task id {sorted(dup)[0]}", sorted(dup)[0])
        svs = self.sv_map
        if len(svs) != len(self.state_variables):
            raise ValidationError("duplicate state variable id", "state_variables")
        tasks = self.task_map
        seen_workers = set()
        for sv in self.state_variables:
            if sv.kind != "behavior":
                continue
            if sv.worker in seen_workers:
                raise ValidationError(f"second behavior state variable for {sv.worker.value}", sv.id)
            seen_workers.add(sv.worker)
            for v in sv.values:
                if v not in tasks:
                    raise ValidationError(f"state variable {sv.id} lists unknown task {v}", v)
                if sv.worker not in tasks[v].allowed_workers:
                    raise ValidationError(f"task {v} is not allowed for {sv.worker.value}", v)
        for t in self.tasks:
            for w in t.allowed_workers:
                sv = self.behavior_sv(w)
                if sv is None or t.id not in sv.values:
                    raise ValidationError(f"task {t.id} has no {w.value} timeline value", t.id)
        triggered = set()
        for rule in self.rules:
            tsv, tval = rule.trigger
            if tsv not in svs:
                raise ValidationError(f"rule trigger references undeclared state variable {tsv}", tsv)
            if tval not in svs[tsv].values:
                raise ValidationError(f"rule trigger value {tval} not in {tsv}", tval)
            triggered.add((tsv, tval))
            for req in rule.requirements:
                if req.state_variable is None:
                    if req.value not in tasks:
                        raise ValidationError(f"requirement references unknown task {req.value}", req.value)
                    continue
                if req.state_variable not in svs:
                    raise ValidationError(
                        f"requirement references undeclared state variable {req.state_variable}",
                        req.state_variable,
                    )
                if req.value not in svs[req.state_variable].values:
                    raise ValidationError(f"requirement value {req.value} not in {req.state_variable}", req.value)
        for sv in self.production_svs:
            for v in sv.values:
                if (sv.id, v) not in triggered:
                    raise ValidationError(f"production value {v} triggers no rule", v)
        robot = set(self.tasks_for(Worker.ROBOT))
        human = set(self.tasks_for(Worker.HUMAN))
        if set(self.synergy.robot_tasks) - robot or set(self.synergy.human_tasks) - human:
            bad = sorted((set(self.synergy.robot_tasks) - robot) | (set(self.synergy.human_tasks) - human))
            raise ValidationError(f"synergy references unknown task {bad[0]}", bad[0])
        return self

    # -- serialization --------------------------------------------------------------------
    def to_json(self) -> dict:
        if self.workspace is not None:
            ws = self.workspace.to_json()
        else:
            ws = self.workspace_ref
        return {
            "version": 1,
            "horizon": self.horizon,
            "release": dict(sorted(self.release.items())),
            "workspace": ws,
            "state_variables": [sv.to_json() for sv in self.state_variables],
            "tasks": [t.to_json() for t in self.tasks],
            "rules": [r.to_json() for r in self.rules],
            "synergy": self.synergy.to_json(),
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.to_json() == other.to_json()


@lru_cache(maxsize=1)
def _schema() -> dict:
    return json.loads(resources.files("timeline_tamp").joinpath("data/problem.schema.json").read_text())


def problem_from_json(data: dict, base_dir: Path | None = None) -> ProblemSpec:
    """Schema-check, build and cross-check a problem document."""
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"{where}: {exc.message}", where) from None
    try:
        svs = tuple(StateVariable.from_json(s) for s in data["state_variables"])
        tasks = tuple(TaskDef.from_json(t) for t in data["tasks"])
        rules = tuple(SynchronizationRule.from_json(r) for r in data["rules"])
    except ModelError as exc:
        raise ValidationError(str(exc)) from None
    robot = [t.id for t in tasks if Worker.ROBOT in t.allowed_workers]
    human = [t.id for t in tasks if Worker.HUMAN in t.allowed_workers]
    try:
        synergy = SynergyMatrix.from_json(data["synergy"], robot, human)
    except KeyError as exc:
        sym = exc.args[0] if exc.args else None
        raise ValidationError(f"synergy references unknown task {sym}", sym) from None
    except ModelError as exc:
        raise ValidationError(str(exc), "synergy") from None
    ws_doc = data["workspace"]
    workspace, ref = None, None
    try:
        if isinstance(ws_doc, dict):
            workspace = Workspace.from_json(ws_doc)
        elif isinstance(ws_doc, str):
            ref = ws_doc
            path = Path(ws_doc) if base_dir is None else base_dir / ws_doc
            if path.exists():
                workspace = Workspace.load(path)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"workspace: {exc}", "workspace") from None
    problem = ProblemSpec(
        state_variables=svs,
        tasks=tasks,
        rules=rules,
        synergy=synergy,
        horizon=float(data["horizon"]),
        workspace=workspace,
        workspace_ref=ref,
        release={k: float(v) for k, v in data.get("release", {}).items()},
    )
    return problem.validate()


def parse_problem(path) -> ProblemSpec:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return problem_from_json(data, path.parent)


# -- mosaics ------------------------------------------------------------------------------


@dataclass(frozen=True)
class MosaicSpec:
    rows: int
    cols: int
    cells: Mapping[str, str] = field(hash=False)
    cubes: Mapping[str, int] = field(hash=False)

    def __post_init__(self):
        expected = {f"{_col_letter(c)}{r}" for c in range(self.cols) for r in range(1, self.rows + 1)}
        if set(self.cells) != expected:
            raise InfeasibleSpec(f"cells must cover exactly {self.rows}x{self.cols} labels")
        for color, n in self.color_counts().items():
            if self.cubes.get(color, 0) < n:
                raise InfeasibleSpec(f"only {self.cubes.get(color, 0)} {color} cubes for {n} cells")

    def color_counts(self) -> dict:
        out: dict = {}
        for c in self.cells.values():
            out[c] = out.get(c, 0) + 1
        return dict(sorted(out.items()))

    def labels(self) -> list:
        """Cell labels ordered by row, then column."""
        return [f"{_col_letter(c)}{r}" for r in range(1, self.rows + 1) for c in range(self.cols)]

    def to_json(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "cells": dict(self.cells), "cubes": dict(self.cubes)}

    @classmethod
    def from_json(cls, data: dict) -> "MosaicSpec":
        return cls(int(data["rows"]), int(data["cols"]), dict(data["cells"]), dict(data["cubes"]))


def _col_letter(i: int) -> str:
    return chr(ord("A") + i)


@lru_cache(maxsize=1)
def _mosaic_data() -> dict:
    return json.loads(resources.files("timeline_tamp").joinpath("data/mosaics.json").read_text())


def mosaic_names() -> list:
    return list(_mosaic_data()["mosaics"])


def load_mosaic(name: str) -> MosaicSpec:
    """Built-in layouts: mosaic-4, mosaic-9, mosaic-16, mosaic-50."""
    mosaics = _mosaic_data()["mosaics"]
    key = name if name in mosaics else f"mosaic-{name}"
    if key not in mosaics:
        raise KeyError(f"unknown mosaic {name!r}; known: {', '.join(mosaics)}")
    return MosaicSpec.from_json(mosaics[key])


def _reachable(width, height, obstacles, blocked, start) -> set:
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack.pop()
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= n[0] < width and 0 <= n[1] < height and n not in seen and n not in obstacles and n not in blocked:
                seen.add(n)
                stack.append(n)
    return seen


def mosaic_workspace(spec: MosaicSpec, seed: int = 0, width: int = 40, height: int = 30,
                     clutter: float = 0.06, robot_speed: float = 2.5, safety_radius: float = 3.0,
                     slowdown_factor: float = 0.5, gripper_time: float = 0.5, doors: int = 3) -> Workspace:
    """Desk layout: mosaic slots in the middle, robot at the top edge, human at the bottom.

    Orange cubes and half of the blue ones lie in the robot's storage band,
    white and the other blue cubes in the human's. Each band is fenced off
    from the assembly area by a rack front with ``doors`` two-cell openings
    (0 disables the fence). Random clutter is redrawn until every object is
    reachable by both workers.
    """
    rng = np.random.default_rng(seed)
    x0 = (width - 2 * (spec.cols - 1)) // 2
    y0 = (height - 2 * (spec.rows - 1)) // 2
    slots = {}
    for label in spec.labels():
        c = ord(label[0]) - ord("A")
        r = int(label[1:]) - 1
        slots[f"slot_{label}"] = ((x0 + 2 * c, y0 + 2 * r),)
    robot_home = (width // 2, 0)
    human_home = (width // 2, height - 1)
    y_slot_max = y0 + 2 * (spec.rows - 1)
    top = [(x, y) for y in range(2, y0 - 2) for x in range(2, width - 2) if x % 2 == 0 and y % 2 == 0]
    bottom = [(x, y) for y in range(y_slot_max + 3, height - 2) for x in range(2, width - 2)
              if x % 2 == 0 and y % 2 == 0]
    robot_side = {c: n for c, n in spec.cubes.items() if c == "orange"}
    human_side = {c: n for c, n in spec.cubes.items() if c == "white"}
    for color, n in spec.cubes.items():
        if color in ("orange", "white"):
            continue
        robot_side[color] = robot_side.get(color, 0) + (n + 1) // 2
        human_side[color] = human_side.get(color, 0) + n // 2
    need_top, need_bottom = sum(robot_side.values()), sum(human_side.values())
    if need_top > len(top) or need_bottom > len(bottom):
        raise InfeasibleSpec("workspace too small for the cube count")
    slot_box = (x0 - 1, y0 - 1, x0 + 2 * (spec.cols - 1) + 1, y_slot_max + 1)
    for _ in range(100):
        locs: dict = {"robot_home": (robot_home,), "human_home": (human_home,)}
        locs.update(slots)
        for band, side in ((top, robot_side), (bottom, human_side)):
            picks = rng.choice(len(band), size=sum(side.values()), replace=False)
            cells = [band[i] for i in sorted(picks)]
            k = 0
            for color in sorted(side):
                n = side[color]
                locs[f"{color}_cube"] = tuple(sorted(locs.get(f"{color}_cube", ()) + tuple(cells[k:k + n])))
                k += n
        objects = {c for k, v in locs.items() if not k.endswith("_home") for c in v}
        keep = set(objects) | {robot_home, human_home}
        near = {(x + dx, y + dy) for (x, y) in keep for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
        obstacles = set()
        if doors > 0:
            for wy in (y0 - 2, y_slot_max + 2):
                gaps = rng.choice(np.arange(1, width - 2), size=doors, replace=False)
                open_x = {int(g) + d for g in gaps for d in (0, 1)}
                obstacles |= {(x, wy) for x in range(width) if x not in open_x}
        noise = rng.random((width, height))
        for x in range(width):
            for y in range(height):
                if (x, y) in near:
                    continue
                if slot_box[0] <= x <= slot_box[2] and slot_box[1] <= y <= slot_box[3]:
                    continue
                if noise[x, y] < clutter:
                    obstacles.add((x, y))
        ok = True
        for home in (robot_home, human_home):
            reach = _reachable(width, height, obstacles, objects, home)
            for cell in objects:
                x, y = cell
                if not any(n in reach for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return Workspace(width, height, frozenset(obstacles), locs, safety_radius, robot_speed,
                             slowdown_factor, gripper_time)
    raise InfeasibleSpec("could not draw a connected workspace")


def robot_nominal_duration(workspace: Workspace, task: TaskDef, start=None) -> float:
    """Expected duration of the robot's pick-and-place for ``task``.

    Without ``start`` the action is a round trip from the slot: the mean, over
    every cube of the task's color, of the exact path cost slot -> cube ->
    slot. Over a whole mosaic each cube is used once, so the mean reflects the
    consumption of nearby cubes. With ``start`` the exact refinement from that
    cell is used instead.
    """
    scene = Scene(workspace)
    if start is not None:
        ref = refine_task_to_motion(scene, PICK_AND_PLACE, task, Configuration(start), mode="exact")
        return ref.duration(workspace)
    cube_label = next(l for l in sorted(task.goal_labels) if l.endswith("_cube"))
    slot_label = next(l for l in sorted(task.goal_labels) if l.startswith("slot_"))
    blocked = scene.blocked()
    sources = {}
    for cell in workspace.cells(slot_label):
        for n in workspace.neighbors(cell, blocked):
            sources[n] = 0.0
    if not sources:
        raise NoFreeApproach(slot_label)
    field_ = distance_field(workspace, sources, blocked)
    costs = []
    for cube in workspace.cells(cube_label):
        d = min((field_.get(n, math.inf) for n in workspace.neighbors(cube, blocked)), default=math.inf)
        costs.append(2.0 * d)
    if not costs or math.isinf(min(costs)):
        raise NoFreeApproach(cube_label)
    finite = [c for c in costs if not math.isinf(c)]
    n_ops = sum(1 for st in PICK_AND_PLACE.steps if st[0] != "move")
    return float(np.mean(finite)) / workspace.robot_speed + n_ops * workspace.gripper_time


def generate_mosaic(spec: MosaicSpec, durations: Mapping[str, float] | None = None, seed: int = 0,
                    workspace: Workspace | None = None, delta: float = DEFAULT_DELTA,
                    robot_widen: float = 0.10, row_precedence: bool = False,
                    capabilities: Mapping[str, frozenset] = COLOR_WORKERS) -> ProblemSpec:
    """Build the planning problem of a mosaic.

    One production value per row contains the row's pick-and-place tasks.
    Robot durations come from the action's exact path cost in the workspace,
    widened by ``robot_widen``; human durations are ``durations[color] ± delta``.
    """
    durations = dict(DEFAULT_HUMAN_DURATIONS if durations is None else durations)
    if workspace is None:
        workspace = mosaic_workspace(spec, seed=seed)
    tasks = []
    for label in spec.labels():
        color = spec.cells[label]
        workers = capabilities.get(color, frozenset())
        if not workers:
            raise InfeasibleSpec(f"no worker can place a {color} cube ({label})")
        tid = f"PickPlace_{label}"
        per = {}
        probe = TaskDef(tid, f"DoRow_{label[1:]}", frozenset({Worker.ROBOT}), {Worker.ROBOT: DurationInterval(0, 0)},
                        PICK_AND_PLACE.name, frozenset({f"{color}_cube", f"slot_{label}"}))
        if Worker.ROBOT in workers:
            try:
                d = robot_nominal_duration(workspace, probe)
            except MotionError as exc:
                raise InfeasibleSpec(f"{tid}: {exc}") from None
            per[Worker.ROBOT] = DurationInterval(round(d * (1 - robot_widen), 6), round(d * (1 + robot_widen), 6))
        if Worker.HUMAN in workers:
            if color not in durations:
                raise InfeasibleSpec(f"no human duration for {color}")
            base = float(durations[color])
            per[Worker.HUMAN] = DurationInterval(max(0.0, base - delta), base + delta)
        tasks.append(replace(probe, allowed_workers=frozenset(workers), durations=per,
                             action_template=PICK_AND_PLACE.name if Worker.ROBOT in workers else None))
    rows = [f"DoRow_{r}" for r in range(1, spec.rows + 1)]
    horizon = float(math.ceil(sum(t.process_duration.max for t in tasks)))
    svs = [
        StateVariable(
            PRODUCTION_SV,
            tuple(rows),
            {v: frozenset(rows) for v in rows},
            {v: DurationInterval(0.0, horizon) for v in rows},
            {v: Controllability.CONTROLLABLE for v in rows},
            kind="production",
        )
    ]
    tags = {Worker.ROBOT: Controllability.PARTIALLY_CONTROLLABLE, Worker.HUMAN: Controllability.UNCONTROLLABLE}
    for w in (Worker.ROBOT, Worker.HUMAN):
        vals = tuple(t.id for t in tasks if w in t.allowed_workers)
        svs.append(
            StateVariable(
                BEHAVIOR_SV[w],
                vals,
                {v: frozenset(vals) for v in vals},
                {t.id: t.durations[w] for t in tasks if w in t.allowed_workers},
                {v: tags[w] for v in vals},
                kind="behavior",
                worker=w,
            )
        )
    rules = []
    for r, row in enumerate(rows, 1):
        reqs = [Requirement(None, t.id, Relation.CONTAINS) for t in tasks if t.production_target == row]
        if row_precedence and r > 1:
            reqs.append(Requirement(PRODUCTION_SV, rows[r - 2], Relation.BEFORE))
        rules.append(SynchronizationRule((PRODUCTION_SV, row), tuple(reqs)))
    synergy = SynergyMatrix.zeros(
        [t.id for t in tasks if Worker.ROBOT in t.allowed_workers],
        [t.id for t in tasks if Worker.HUMAN in t.allowed_workers],
    )
    return ProblemSpec(tuple(svs), tuple(tasks), tuple(rules), synergy, horizon, workspace).validate()


def residual_problem(problem: ProblemSpec, completed, release: Mapping[str, float] | None = None) -> ProblemSpec:
    """The problem left after ``completed`` tasks are done.

    Rows whose tasks are all done disappear, together with precedence
    requirements on them. ``release`` gives each worker's earliest start.
    """
    done = set(completed)
    tasks = tuple(t for t in problem.tasks if t.id not in done)
    keep_rows = set()
    rules = []
    for rule in problem.rules:
        reqs = tuple(r for r in rule.requirements if not (r.state_variable is None and r.value in done))
        if any(r.state_variable is None for r in reqs):
            keep_rows.add(rule.trigger)
            rules.append(SynchronizationRule(rule.trigger, reqs))
    rules = [
        SynchronizationRule(
            r.trigger,
            tuple(q for q in r.requirements if q.state_variable is None or (q.state_variable, q.value) in keep_rows),
        )
        for r in rules
    ]
    svs = []
    for sv in problem.state_variables:
        if sv.kind == "production":
            vals = tuple(v for v in sv.values if (sv.id, v) in keep_rows)
        else:
            vals = tuple(v for v in sv.values if v not in done)
        svs.append(
            StateVariable(
                sv.id,
                vals,
                {v: frozenset(s for s in sv.transitions.get(v, ()) if s in vals) for v in vals},
                {v: sv.durations[v] for v in vals},
                {v: sv.controllability[v] for v in vals},
                kind=sv.kind,
                worker=sv.worker,
            )
        )
    robot = [t.id for t in tasks if Worker.ROBOT in t.allowed_workers]
    human = [t.id for t in tasks if Worker.HUMAN in t.allowed_workers]
    return ProblemSpec(
        tuple(svs),
        tasks,
        tuple(rules),
        problem.synergy.restricted(robot, human),
        problem.horizon,
        problem.workspace,
        problem.workspace_ref,
        dict(release if release is not None else problem.release),
    )


def collapse_to_midpoints(problem: ProblemSpec) -> ProblemSpec:
    """Same problem with every duration interval collapsed to its midpoint."""
    tasks = tuple(replace(t, durations={w: d.collapsed() for w, d in t.durations.items()}) for t in problem.tasks)
    svs = tuple(
        sv if sv.kind == "production" else replace(sv, durations={v: d.collapsed() for v, d in sv.durations.items()})
        for sv in problem.state_variables
    )
    return replace(problem, tasks=tasks, state_variables=svs)
