"""Core domain types: workers, tasks, state variables, tokens, synergy, costs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class ModelError(ValueError):
    """Base class for invalid model values."""


class NoCapableWorker(ModelError):
    pass


class UnknownTask(KeyError):
    pass


class Worker(str, Enum):
    HUMAN = "human"
    ROBOT = "robot"


class Controllability(str, Enum):
    CONTROLLABLE = "controllable"
    PARTIALLY_CONTROLLABLE = "partially_controllable"
    UNCONTROLLABLE = "uncontrollable"


class Relation(str, Enum):
    CONTAINS = "contains"
    BEFORE = "before"
    MEETS = "meets"


class _Incompatible:
    """Sentinel for pairs of tasks that must never run concurrently."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INCOMPATIBLE"

    def __reduce__(self):
        return (_Incompatible, ())


INCOMPATIBLE = _Incompatible()


@dataclass(frozen=True)
class DurationInterval:
    min: float
    max: float

    def __post_init__(self):
        if not (0 <= self.min <= self.max):
            raise ModelError(f"invalid duration interval [{self.min}, {self.max}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.min + self.max)

    def collapsed(self) -> "DurationInterval":
        m = self.midpoint
        return DurationInterval(m, m)

    def to_json(self) -> list:
        return [self.min, self.max]

    @classmethod
    def from_json(cls, data) -> "DurationInterval":
        lo, hi = data
        return cls(float(lo), float(hi))


@dataclass(frozen=True, eq=True)
class TaskDef:
    id: str
    production_target: str
    allowed_workers: frozenset
    durations: Mapping[Worker, DurationInterval] = field(hash=False)
    action_template: str | None = None
    goal_labels: frozenset = frozenset()

    def __post_init__(self):
        if not self.allowed_workers:
            raise ModelError(f"task {self.id} has no allowed worker")
        for w in self.allowed_workers:
            if w not in self.durations:
                raise ModelError(f"task {self.id} lacks a duration for {w.value}")
        if Worker.ROBOT in self.allowed_workers and not self.action_template:
            raise ModelError(f"robot task {self.id} needs an action template")

    @property
    def process_duration(self) -> DurationInterval:
        return derive_process_duration(
            self.id, {w: self.durations[w] for w in self.allowed_workers}
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "production_target": self.production_target,
            "allowed_workers": sorted(w.value for w in self.allowed_workers),
            "durations": {w.value: d.to_json() for w, d in sorted(self.durations.items())},
            "action_template": self.action_template,
            "goal_labels": sorted(self.goal_labels),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TaskDef":
        return cls(
            id=data["id"],
            production_target=data["production_target"],
            allowed_workers=frozenset(Worker(w) for w in data["allowed_workers"]),
            durations={Worker(w): DurationInterval.from_json(d) for w, d in data["durations"].items()},
            action_template=data.get("action_template"),
            goal_labels=frozenset(data.get("goal_labels", ())),
        )


@dataclass(frozen=True)
class StateVariable:
    """A domain feature: values, allowed transitions, durations and controllability.

    ``kind`` is ``"production"`` for goal timelines whose tokens are containers
    (rows of the mosaic) and ``"behavior"`` for a worker's timeline; a behavior
    variable names the worker that executes its tokens.
    """

    id: str
    values: tuple
    transitions: Mapping[str, frozenset] = field(hash=False)
    durations: Mapping[str, DurationInterval] = field(hash=False)
    controllability: Mapping[str, Controllability] = field(hash=False)
    kind: str = "behavior"
    worker: Worker | None = None

    def __post_init__(self):
        vals = set(self.values)
        if len(vals) != len(self.values):
            raise ModelError(f"state variable {self.id} has duplicate values")
        if self.kind not in ("production", "behavior"):
            raise ModelError(f"state variable {self.id}: unknown kind {self.kind!r}")
        if self.kind == "behavior" and self.worker is None:
            raise ModelError(f"behavior state variable {self.id} needs a worker")
        for v, succ in self.transitions.items():
            if v not in vals or not set(succ) <= vals:
                raise ModelError(f"state variable {self.id}: transition references unknown value")
        for v in self.values:
            if v not in self.durations or v not in self.controllability:
                raise ModelError(f"state variable {self.id}: value {v} lacks duration or tag")

    def allows(self, prev: str, nxt: str) -> bool:
        return nxt in self.transitions.get(prev, frozenset())

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "worker": self.worker.value if self.worker else None,
            "values": list(self.values),
            "transitions": {v: sorted(s) for v, s in self.transitions.items()},
            "durations": {v: d.to_json() for v, d in self.durations.items()},
            "controllability": {v: c.value for v, c in self.controllability.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "StateVariable":
        return cls(
            id=data["id"],
            values=tuple(data["values"]),
            transitions={v: frozenset(s) for v, s in data["transitions"].items()},
            durations={v: DurationInterval.from_json(d) for v, d in data["durations"].items()},
            controllability={v: Controllability(c) for v, c in data["controllability"].items()},
            kind=data.get("kind", "behavior"),
            worker=Worker(data["worker"]) if data.get("worker") else None,
        )


@dataclass(frozen=True)
class Token:
    id: int
    state_variable: str
    value: str
    end_interval: tuple
    duration: DurationInterval
    tag: Controllability

    def __post_init__(self):
        e, e2 = self.end_interval
        if e > e2 + 1e-9:
            raise ModelError(f"token {self.id}: end interval [{e}, {e2}] is empty")

    @property
    def earliest_start(self) -> float:
        return self.end_interval[0] - self.duration.max

    @property
    def latest_start(self) -> float:
        return self.end_interval[1] - self.duration.min

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "state_variable": self.state_variable,
            "value": self.value,
            "end_interval": list(self.end_interval),
            "duration": self.duration.to_json(),
            "tag": self.tag.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Token":
        return cls(
            id=int(data["id"]),
            state_variable=data["state_variable"],
            value=data["value"],
            end_interval=tuple(float(x) for x in data["end_interval"]),
            duration=DurationInterval.from_json(data["duration"]),
            tag=Controllability(data["tag"]),
        )


@dataclass(frozen=True)
class FlexibleTimeline:
    state_variable: str
    tokens: tuple = ()

    def is_ordered(self) -> bool:
        return all(
            a.end_interval[0] <= b.end_interval[1] + 1e-9
            for a, b in zip(self.tokens, self.tokens[1:])
        )

    def respects(self, sv: StateVariable) -> bool:
        return all(sv.allows(a.value, b.value) for a, b in zip(self.tokens, self.tokens[1:]))

    def to_json(self) -> dict:
        return {"state_variable": self.state_variable, "tokens": [t.to_json() for t in self.tokens]}

    @classmethod
    def from_json(cls, data: dict) -> "FlexibleTimeline":
        return cls(data["state_variable"], tuple(Token.from_json(t) for t in data["tokens"]))


@dataclass(frozen=True)
class Requirement:
    # state_variable None: any behavior timeline whose values include ``value``
    state_variable: str | None
    value: str
    relation: Relation

    def to_json(self) -> dict:
        return {"state_variable": self.state_variable, "value": self.value, "relation": self.relation.value}

    @classmethod
    def from_json(cls, data: dict) -> "Requirement":
        return cls(data.get("state_variable"), data["value"], Relation(data["relation"]))


@dataclass(frozen=True)
class SynchronizationRule:
    trigger: tuple
    requirements: tuple

    def to_json(self) -> dict:
        sv, value = self.trigger
        return {
            "trigger": {"state_variable": sv, "value": value},
            "requirements": [r.to_json() for r in self.requirements],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SynchronizationRule":
        trig = data["trigger"]
        return cls(
            (trig["state_variable"], trig["value"]),
            tuple(Requirement.from_json(r) for r in data["requirements"]),
        )


@dataclass(frozen=True)
class CostVector:
    f_d: float
    f_s: float

    def __post_init__(self):
        if self.f_d < 0:
            raise ModelError("f_d must be non-negative")

    def as_tuple(self) -> tuple:
        return (self.f_d, self.f_s)


class SynergyMatrix:
    """Pairwise duration change s[r, h] when robot task r runs alongside human task h.

    Entries are floats or :data:`INCOMPATIBLE`. A pair (t, t) is always
    incompatible: one task cannot be executed by both workers at once.
    Missing pairs between declared tasks read as 0.
    """

    def __init__(self, robot_tasks: Iterable[str], human_tasks: Iterable[str], entries=None):
        self.robot_tasks = tuple(robot_tasks)
        self.human_tasks = tuple(human_tasks)
        self._robot = set(self.robot_tasks)
        self._human = set(self.human_tasks)
        self._entries: dict = {}
        for (r, h), s in (entries or {}).items():
            self.set(r, h, s)

    def set(self, robot_task: str, human_task: str, value) -> None:
        self._check(robot_task, human_task)
        if robot_task == human_task:
            value = INCOMPATIBLE
        if value is not INCOMPATIBLE:
            value = float(value)
            if math.isnan(value) or math.isinf(value):
                raise ModelError("synergy coefficients must be finite or INCOMPATIBLE")
        self._entries[(robot_task, human_task)] = value

    def _check(self, r: str, h: str) -> None:
        if r not in self._robot:
            raise UnknownTask(r)
        if h not in self._human:
            raise UnknownTask(h)

    def lookup(self, robot_task: str, human_task: str):
        self._check(robot_task, human_task)
        if robot_task == human_task:
            return INCOMPATIBLE
        return self._entries.get((robot_task, human_task), 0.0)

    def worst_in_row(self, robot_task: str) -> float:
        """Largest finite coefficient of a robot task's row (0 if none)."""
        vals = [self.lookup(robot_task, h) for h in self.human_tasks]
        finite = [v for v in vals if v is not INCOMPATIBLE]
        return max(finite) if finite else 0.0

    def restricted(self, robot_tasks, human_tasks) -> "SynergyMatrix":
        rs = [r for r in self.robot_tasks if r in set(robot_tasks)]
        hs = [h for h in self.human_tasks if h in set(human_tasks)]
        out = SynergyMatrix(rs, hs)
        for (r, h), s in self._entries.items():
            if r in out._robot and h in out._human:
                out._entries[(r, h)] = s
        return out

    def items(self):
        for r in self.robot_tasks:
            for h in self.human_tasks:
                yield (r, h), self.lookup(r, h)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SynergyMatrix):
            return NotImplemented
        return (
            self.robot_tasks == other.robot_tasks
            and self.human_tasks == other.human_tasks
            and dict(self.items()) == dict(other.items())
        )

    def to_json(self) -> list:
        return [[r, h, "incompatible" if s is INCOMPATIBLE else s] for (r, h), s in self.items()]

    @classmethod
    def from_json(cls, triples, robot_tasks, human_tasks) -> "SynergyMatrix":
        m = cls(robot_tasks, human_tasks)
        for r, h, s in triples:
            m.set(r, h, INCOMPATIBLE if s == "incompatible" else s)
        return m

    @classmethod
    def zeros(cls, robot_tasks, human_tasks) -> "SynergyMatrix":
        m = cls(robot_tasks, human_tasks)
        for r in m.robot_tasks:
            for h in m.human_tasks:
                m.set(r, h, 0.0)
        return m


def derive_process_duration(task: str, workers: Mapping[Worker, DurationInterval]) -> DurationInterval:
    """Duration interval of a process task over every worker able to run it."""
    if not workers:
        raise NoCapableWorker(task)
    return DurationInterval(
        min(d.min for d in workers.values()),
        max(d.max for d in workers.values()),
    )


def synergy_lookup(matrix: SynergyMatrix, robot_task: str, human_task: str):
    return matrix.lookup(robot_task, human_task)
