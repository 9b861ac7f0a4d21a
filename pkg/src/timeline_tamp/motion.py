"""Desk-scale geometric layer.

The arm is reduced to a gripper moving on a 4-connected grid. An action's
movements become layers of equivalent goal configurations (every approach
cell of every matching object), and each movement is solved as a multi-goal
shortest-path query.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class MotionError(RuntimeError):
    pass


class NoPath(MotionError):
    pass


class UnresolvedLabel(MotionError):
    pass


class NoFreeApproach(MotionError):
    pass


class MotionFailure(MotionError):
    def __init__(self, layer: int, reason: str = ""):
        super().__init__(f"motion planning failed at layer {layer}{': ' + reason if reason else ''}")
        self.layer = layer


class Gripper(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True, order=True)
class Configuration:
    cell: tuple
    gripper: Gripper = Gripper.OPEN


Cell = tuple  # (x, y)

_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class Workspace:
    width: int
    height: int
    obstacles: frozenset = frozenset()
    locations: Mapping[str, tuple] = field(default_factory=dict, hash=False)
    safety_radius: float = 3.0
    robot_speed: float = 2.0
    slowdown_factor: float = 0.5
    gripper_time: float = 0.5

    def __post_init__(self):
        if not (0 <= self.slowdown_factor <= 1):
            raise ValueError("slowdown_factor must lie in [0, 1]")
        if self.robot_speed <= 0:
            raise ValueError("robot_speed must be positive")
        for label, cells in self.locations.items():
            for c in cells:
                if not self.in_bounds(c):
                    raise ValueError(f"location {label} at {c} is out of bounds")
                if c in self.obstacles:
                    raise ValueError(f"location {label} at {c} lies on an obstacle")

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def neighbors(self, cell, blocked: frozenset | set = frozenset()):
        x, y = cell
        for dx, dy in _STEPS:
            n = (x + dx, y + dy)
            if self.in_bounds(n) and n not in self.obstacles and n not in blocked:
                yield n

    def cells(self, label: str) -> tuple:
        try:
            return tuple(self.locations[label])
        except KeyError:
            raise UnresolvedLabel(label) from None

    def home(self, worker: str) -> Cell:
        return self.cells(f"{worker}_home")[0]

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": sorted([list(c) for c in self.obstacles]),
            "locations": {k: [list(c) for c in v] for k, v in sorted(self.locations.items())},
            "safety_radius": self.safety_radius,
            "robot_speed": self.robot_speed,
            "slowdown_factor": self.slowdown_factor,
            "gripper_time": self.gripper_time,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Workspace":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            obstacles=frozenset(tuple(c) for c in data["obstacles"]),
            locations={k: tuple(tuple(c) for c in v) for k, v in data["locations"].items()},
            safety_radius=float(data.get("safety_radius", 3.0)),
            robot_speed=float(data.get("robot_speed", 2.0)),
            slowdown_factor=float(data.get("slowdown_factor", 0.5)),
            gripper_time=float(data.get("gripper_time", 0.5)),
        )

    @classmethod
    def load(cls, path) -> "Workspace":
        return cls.from_json(json.loads(Path(path).read_text()))


class Scene:
    """Mutable view of a workspace: which objects are still on the table.

    Every location cell except the ``*_home`` labels blocks motion while the
    object is present.
    """

    def __init__(self, workspace: Workspace):
        self.workspace = workspace
        self.objects: dict[str, set] = {
            k: set(v) for k, v in workspace.locations.items() if not k.endswith("_home")
        }

    def copy(self) -> "Scene":
        other = Scene.__new__(Scene)
        other.workspace = self.workspace
        other.objects = {k: set(v) for k, v in self.objects.items()}
        return other

    def available(self, label: str) -> set:
        if label not in self.objects:
            raise UnresolvedLabel(label)
        return self.objects[label]

    def blocked(self) -> frozenset:
        out = set()
        for cells in self.objects.values():
            out |= cells
        return frozenset(out)

    def take(self, label: str, cell) -> None:
        self.objects[label].discard(cell)


@dataclass(frozen=True)
class ActionTemplate:
    """An action as an ordered list of steps: ``("move", role, pose)`` or ``("open"|"close",)``."""

    name: str
    steps: tuple


PICK_AND_PLACE = ActionTemplate(
    "pick_and_place",
    (
        ("move", "pick", "pre-picking"),
        ("open",),
        ("move", "pick", "picking"),
        ("close",),
        ("move", "pick", "post-grasp"),
        ("move", "place", "pre-placing"),
        ("move", "place", "placing"),
        ("open",),
    ),
)

TEMPLATES = {PICK_AND_PLACE.name: PICK_AND_PLACE}


@dataclass(frozen=True)
class GoalGraph:
    layers: tuple  # tuple of frozenset[Configuration]; layers[0] is the start
    gripper_ops: tuple  # per layer, ops performed once the layer is reached
    labels: tuple  # per layer, the scene label the layer targets (None for start)


@dataclass(frozen=True)
class MotionPlan:
    waypoints: tuple
    cost: float
    gripper_ops: tuple = ()

    @property
    def end(self) -> Configuration:
        return self.waypoints[-1]


@dataclass
class SearchStats:
    expansions: int = 0


def _role_labels(task_labels: Iterable[str]) -> dict:
    roles = {}
    for lab in sorted(task_labels):
        if lab.endswith("_cube"):
            roles["pick"] = lab
        elif lab.startswith("slot_"):
            roles["place"] = lab
    return roles


def approach_cells(workspace: Workspace, cell, blocked) -> list:
    return [n for n in workspace.neighbors(cell, blocked)]


def get_goals_from_scene(template: ActionTemplate, scene: Scene, task, start=None) -> GoalGraph:
    """Build the layered goal graph for ``task``.

    Consecutive moves toward the same object (pre-pose, pose, post-pose)
    land on the same grid cell after the planar reduction, so they collapse
    into one layer. Pick layers hold the free 4-neighbours of every available
    object with the task's label.
    """
    ws = scene.workspace
    roles = _role_labels(task.goal_labels)
    blocked = scene.blocked()
    layers, ops, labels = [], [], []
    if start is not None:
        layers.append(frozenset([start]))
        ops.append(())
        labels.append(None)
    current_role = None
    gripper = Gripper.OPEN
    for step in template.steps:
        if step[0] == "move":
            role = step[1]
            if role == current_role:
                continue
            if role not in roles:
                raise UnresolvedLabel(f"{task.id}: no {role} label")
            label = roles[role]
            targets = scene.available(label)
            if not targets:
                raise UnresolvedLabel(f"{label}: none available")
            configs = set()
            for cell in targets:
                for n in approach_cells(ws, cell, blocked):
                    configs.add(Configuration(n, gripper))
            if not configs:
                raise NoFreeApproach(label)
            layers.append(frozenset(configs))
            ops.append(())
            labels.append(label)
            current_role = role
        else:
            gripper = Gripper.OPEN if step[0] == "open" else Gripper.CLOSED
            if not layers:
                continue
            ops[-1] = ops[-1] + (gripper,)
    return GoalGraph(tuple(layers), tuple(ops), tuple(labels))


def _reconstruct(parent: dict, cell) -> list:
    path = [cell]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path


def shortest_path(workspace: Workspace, start, goal, blocked=frozenset(), stats: SearchStats | None = None):
    """Single-goal Dijkstra on the grid; returns the cell path or None."""
    if goal in blocked or goal in workspace.obstacles:
        return None
    dist = {start: 0}
    parent = {start: None}
    heap = [(0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        if stats is not None:
            stats.expansions += 1
        if cell == goal:
            return list(reversed(_reconstruct(parent, cell)))
        for n in workspace.neighbors(cell, blocked):
            nd = d + 1
            if nd < dist.get(n, math.inf):
                dist[n] = nd
                parent[n] = cell
                heapq.heappush(heap, (nd, n))
    return None


def distance_field(workspace: Workspace, sources: Mapping, blocked=frozenset()) -> dict:
    """Multi-source Dijkstra: cell -> min over sources of (offset + path length)."""
    dist = {}
    heap = [(float(off), c) for c, off in sorted(sources.items())]
    heapq.heapify(heap)
    for off, c in heap:
        dist[c] = min(dist.get(c, math.inf), off)
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        for n in workspace.neighbors(cell, blocked):
            nd = d + 1
            if nd < dist.get(n, math.inf):
                dist[n] = nd
                heapq.heappush(heap, (nd, n))
    return dist


def _exact_multi_goal(workspace, start, goal_cells, blocked, stats):
    # Reversed search seeded from every goal; the first time the start is
    # popped gives the minimum over goals. Ties: (cost, goal id, cell).
    if start in goal_cells:
        return [start]
    dist, parent, heap = {}, {}, []
    for gid, g in enumerate(goal_cells):
        if g in blocked or g in workspace.obstacles or not workspace.in_bounds(g):
            continue
        dist[g] = 0
        parent[g] = None
        heap.append((0, gid, g))
    heapq.heapify(heap)
    expand_blocked = set(blocked)
    expand_blocked.discard(start)
    while heap:
        d, gid, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        if stats is not None:
            stats.expansions += 1
        if cell == start:
            return _reconstruct(parent, cell)
        for n in workspace.neighbors(cell, expand_blocked):
            nd = d + 1
            if nd < dist.get(n, math.inf):
                dist[n] = nd
                parent[n] = cell
                heapq.heappush(heap, (nd, gid, n))
    return None


@dataclass(frozen=True)
class Sampling:
    seed: int = 0
    iterations: int = 2000
    goal_bias: float = 0.2
    step: int = 3


def _sampling_multi_goal(workspace, start, goal_cells, blocked, mode: Sampling, stats):
    """Anytime randomized tree with goal bias, informed sampling and rewiring.

    Nodes are grid cells. New cells take the cheapest tree neighbour as parent
    and improvements cascade to neighbours, so tree costs are exact within
    the explored region; once a goal is reached, samples are restricted to
    cells that could still shorten the best path.
    """
    goals = [g for g in goal_cells if workspace.in_bounds(g) and g not in blocked and g not in workspace.obstacles]
    if not goals:
        return None
    goal_set = set(goals)
    if start in goal_set:
        return [start]
    rng = np.random.default_rng(mode.seed)
    free = [
        (x, y)
        for x in range(workspace.width)
        for y in range(workspace.height)
        if (x, y) not in workspace.obstacles and (x, y) not in blocked
    ]
    free_arr = np.array(free)
    goal_arr = np.array(goals)
    to_start = np.abs(free_arr - np.array(start)).sum(axis=1)
    to_goal = np.min(np.abs(free_arr[:, None, :] - goal_arr[None, :, :]).sum(axis=2), axis=1)
    lower_bound = int(np.min(np.abs(goal_arr - np.array(start)).sum(axis=1)))

    g = {start: 0}
    parent = {start: None}
    coords = np.zeros((len(free) + 1, 2))
    coords[0] = start
    order = [start]
    best_goal, best_cost = None, math.inf
    informed = None

    def add(cell):
        nonlocal best_goal, best_cost
        cands = [(g[n], n) for n in workspace.neighbors(cell, blocked) if n in g]
        if not cands:
            return False
        gc, p = min(cands)
        g[cell] = gc + 1
        parent[cell] = p
        coords[len(order)] = cell
        order.append(cell)
        queue = [cell]
        while queue:
            c = queue.pop()
            if stats is not None:
                stats.expansions += 1
            for n in workspace.neighbors(c, blocked):
                if n in g and g[n] > g[c] + 1:
                    g[n] = g[c] + 1
                    parent[n] = c
                    queue.append(n)
                    if n in goal_set and g[n] < best_cost:
                        best_cost, best_goal = g[n], n
            if c in goal_set and g[c] < best_cost:
                best_cost, best_goal = g[c], c
        return True

    for _ in range(mode.iterations):
        if best_cost <= lower_bound:
            break
        if rng.random() < mode.goal_bias:
            target = goals[int(rng.integers(len(goals)))]
        else:
            pool = free_arr if informed is None else informed
            if len(pool) == 0:
                break
            target = tuple(int(v) for v in pool[int(rng.integers(len(pool)))])
        n_nodes = len(order)
        d2 = ((coords[:n_nodes] - np.array(target)) ** 2).sum(axis=1)
        cur = order[int(np.argmin(d2))]
        for _ in range(mode.step):
            if cur == target:
                break
            nxt = min(
                workspace.neighbors(cur, blocked),
                key=lambda n: ((n[0] - target[0]) ** 2 + (n[1] - target[1]) ** 2, n),
                default=None,
            )
            if nxt is None:
                break
            if (nxt[0] - target[0]) ** 2 + (nxt[1] - target[1]) ** 2 >= (cur[0] - target[0]) ** 2 + (cur[1] - target[1]) ** 2:
                break
            if nxt not in g:
                add(nxt)
            cur = nxt
        if best_goal is not None:
            informed = free_arr[to_start + to_goal < best_cost]
    if best_goal is None:
        return None
    return list(reversed(_reconstruct(parent, best_goal)))


def multi_goal_plan(workspace: Workspace, start: Configuration, goals, mode="exact",
                    blocked=frozenset(), stats: SearchStats | None = None) -> MotionPlan:
    """Minimum-cost path from ``start`` to any configuration in ``goals``."""
    goals = sorted(goals)
    if not goals:
        raise ValueError("goal set is empty")
    if start.cell in workspace.obstacles or not workspace.in_bounds(start.cell):
        raise ValueError(f"start {start.cell} is not free")
    by_cell = {}
    for q in goals:
        by_cell.setdefault(q.cell, q)
    cells = sorted(by_cell)
    if mode == "exact":
        path = _exact_multi_goal(workspace, start.cell, cells, blocked, stats)
    elif isinstance(mode, Sampling):
        path = _sampling_multi_goal(workspace, start.cell, cells, blocked, mode, stats)
    else:
        raise ValueError(f"unknown motion mode {mode!r}")
    if path is None:
        raise NoPath(f"no goal reachable from {start.cell}")
    end = by_cell[path[-1]]
    waypoints = tuple(Configuration(c, start.gripper) for c in path[:-1]) + (end,)
    return MotionPlan(waypoints, float(len(path) - 1))


def closest_goal_plan(workspace: Workspace, start: Configuration, goals, blocked=frozenset(),
                      stats: SearchStats | None = None) -> MotionPlan:
    """Baseline: pick the goal nearest in straight-line distance, then plan to it.

    Unreachable goals are skipped in order of distance.
    """
    sx, sy = start.cell
    ranked = sorted(goals, key=lambda q: ((q.cell[0] - sx) ** 2 + (q.cell[1] - sy) ** 2, q))
    for q in ranked:
        path = shortest_path(workspace, start.cell, q.cell, blocked - {start.cell}, stats)
        if path is not None:
            wps = tuple(Configuration(c, start.gripper) for c in path[:-1]) + (q,)
            return MotionPlan(wps, float(len(path) - 1))
    raise NoPath(f"no goal reachable from {start.cell}")


@dataclass(frozen=True)
class Refinement:
    plans: tuple
    cost: float
    picked: dict  # label -> object cell chosen for that layer
    gripper_ops: int

    @property
    def end(self) -> Configuration:
        return self.plans[-1].end

    def duration(self, workspace: Workspace) -> float:
        return self.cost / workspace.robot_speed + self.gripper_ops * workspace.gripper_time

    def cells(self) -> list:
        out = [self.plans[0].waypoints[0].cell]
        for p in self.plans:
            out.extend(q.cell for q in p.waypoints[1:])
        return out


def _object_for(scene: Scene, label: str, approach) -> tuple:
    ax, ay = approach
    adj = sorted(c for c in scene.available(label) if abs(c[0] - ax) + abs(c[1] - ay) == 1)
    return adj[0]


def refine_task_to_motion(scene: Scene, template: ActionTemplate, task, q_current: Configuration,
                          mode="exact", strategy: str = "multi_goal", extra_blocked=frozenset(),
                          stats: SearchStats | None = None, static_blocked=None) -> Refinement:
    """Turn a task into one motion plan per layer of its goal graph.

    Layers are solved greedily in order from the configuration reached by the
    previous one. ``strategy`` selects the goal policy: ``multi_goal`` plans
    to the whole layer at once, ``single_goal`` commits to the straight-line
    closest goal first, ``precomputed`` does the same on the static map given
    by ``static_blocked``.
    """
    ws = scene.workspace
    graph = get_goals_from_scene(template, scene, task, start=q_current)
    blocked = (scene.blocked() | frozenset(extra_blocked)) - {q_current.cell}
    plans, picked = [], {}
    cost, n_ops = 0.0, 0
    current = q_current
    for i in range(1, len(graph.layers)):
        layer = graph.layers[i]
        try:
            if strategy == "multi_goal":
                plan = multi_goal_plan(ws, current, layer, mode, blocked, stats)
            elif strategy == "single_goal":
                plan = closest_goal_plan(ws, current, layer, blocked, stats)
            elif strategy == "precomputed":
                static = blocked if static_blocked is None else frozenset(static_blocked) | frozenset(extra_blocked)
                plan = closest_goal_plan(ws, current, layer, static - {current.cell}, None)
            else:
                raise ValueError(f"unknown strategy {strategy!r}")
        except NoPath:
            raise MotionFailure(i) from None
        ops = tuple((len(plan.waypoints) - 1, op) for op in graph.gripper_ops[i])
        plan = MotionPlan(plan.waypoints, plan.cost, ops)
        plans.append(plan)
        cost += plan.cost
        n_ops += len(ops)
        label = graph.labels[i]
        if label is not None and label.endswith("_cube"):
            picked[label] = _object_for(scene, label, plan.end.cell)
        current = plan.end
    return Refinement(tuple(plans), cost, picked, n_ops)


def layered_shortest_cost(workspace: Workspace, graph: GoalGraph, blocked=frozenset()) -> float:
    """Exact shortest path through every layer of the goal graph."""
    (start,) = graph.layers[0]
    offsets = {start.cell: 0.0}
    blocked = frozenset(blocked) - {start.cell}
    for layer in graph.layers[1:]:
        field_ = distance_field(workspace, offsets, blocked)
        offsets = {q.cell: field_[q.cell] for q in layer if q.cell in field_}
        if not offsets:
            return math.inf
    return min(offsets.values())
