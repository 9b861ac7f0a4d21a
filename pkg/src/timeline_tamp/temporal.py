"""Simple temporal network behind flexible timelines.

Time points are indexed integers; point 0 is the origin, fixed at time 0.
``dist[i, j]`` is the tightest known upper bound on ``t_j - t_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import Controllability, Token

EPS = 1e-9
INF = np.inf


class DuplicateToken(ValueError):
    pass


class NotPropagated(RuntimeError):
    pass


@dataclass(frozen=True)
class TimePoint:
    id: int
    kind: str  # "origin" | "start" | "end"
    token: int | None = None


@dataclass(frozen=True)
class StnConstraint:
    source: int
    target: int
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper + EPS:
            raise ValueError(f"constraint lower {self.lower} > upper {self.upper}")


@dataclass(frozen=True)
class Consistent:
    intervals: dict

    @property
    def ok(self) -> bool:
        return True


@dataclass(frozen=True)
class Inconsistent:
    negative_cycle: tuple

    @property
    def ok(self) -> bool:
        return False


def _floyd_warshall(dist: np.ndarray, pred: np.ndarray | None = None):
    n = dist.shape[0]
    for k in range(n):
        via = dist[:, k, None] + dist[None, k, :]
        better = via < dist - EPS
        if pred is not None and better.any():
            pred[better] = np.broadcast_to(pred[k, :], (n, n))[better]
        np.minimum(dist, via, out=dist)
    return dist


class STN:
    """Mutable network; the planner copies it before branching."""

    def __init__(self, horizon: float = INF):
        self.horizon = float(horizon)
        self.points: list[TimePoint] = [TimePoint(0, "origin")]
        self.constraints: list[StnConstraint] = []
        self.token_points: dict[int, tuple[int, int]] = {}
        self._dist = np.zeros((1, 1))
        self._consistent = True
        self._closed = True

    # -- construction -----------------------------------------------------------------
    def copy(self) -> "STN":
        other = STN.__new__(STN)
        other.horizon = self.horizon
        other.points = list(self.points)
        other.constraints = list(self.constraints)
        other.token_points = dict(self.token_points)
        other._dist = self._dist.copy()
        other._consistent = self._consistent
        other._closed = self._closed
        return other

    @property
    def size(self) -> int:
        return len(self.points)

    def add_point(self, kind: str, token: int | None = None) -> int:
        pid = len(self.points)
        self.points.append(TimePoint(pid, kind, token))
        n = pid + 1
        dist = np.full((n, n), INF)
        dist[:pid, :pid] = self._dist
        dist[pid, pid] = 0.0
        self._dist = dist
        return pid

    def add_constraint(self, source: int, target: int, lower: float = -INF, upper: float = INF) -> bool:
        """Record ``lower <= t_target - t_source <= upper`` and tighten incrementally.

        Returns False once the network is inconsistent.
        """
        c = StnConstraint(source, target, float(lower), float(upper))
        self.constraints.append(c)
        if self._closed and self._consistent:
            if c.upper < INF:
                self._tighten(source, target, c.upper)
            if c.lower > -INF and self._consistent:
                self._tighten(target, source, -c.lower)
        return self._consistent

    def _tighten(self, a: int, b: int, w: float) -> None:
        d = self._dist
        if w >= d[a, b] - EPS:
            return
        cand = d[:, a, None] + w + d[None, b, :]
        np.minimum(d, cand, out=d)
        if (np.diagonal(d) < -EPS).any():
            self._consistent = False

    def add_token_constraints(self, token: Token) -> tuple[int, int]:
        """Insert start/end points for ``token`` with its duration and horizon bounds.

        Uncontrollable and partially controllable tokens are pinned to their
        maximum duration, so a plan consistent here stays executable for any
        realized duration up to that maximum.
        """
        if token.id in self.token_points:
            raise DuplicateToken(token.id)
        s = self.add_point("start", token.id)
        e = self.add_point("end", token.id)
        self.token_points[token.id] = (s, e)
        lo, hi = token.duration.min, token.duration.max
        if token.tag is not Controllability.CONTROLLABLE:
            lo = hi
        self.add_constraint(0, s, 0.0, self.horizon)
        self.add_constraint(0, e, 0.0, self.horizon)
        self.add_constraint(s, e, lo, hi)
        return s, e

    def before(self, first: int, second: int, gap: float = 0.0) -> bool:
        """Token ``first`` ends no later than ``second`` starts."""
        return self.add_constraint(self.token_points[first][1], self.token_points[second][0], gap, INF)

    def meets(self, first: int, second: int) -> bool:
        return self.add_constraint(self.token_points[first][1], self.token_points[second][0], 0.0, 0.0)

    def contains(self, outer: int, inner: int) -> bool:
        os_, oe = self.token_points[outer]
        is_, ie = self.token_points[inner]
        return self.add_constraint(os_, is_, 0.0, INF) and self.add_constraint(ie, oe, 0.0, INF)

    # -- queries ----------------------------------------------------------------------
    @property
    def consistent(self) -> bool:
        return self._consistent

    @property
    def dist(self) -> np.ndarray:
        if not self._closed:
            raise NotPropagated("network has not been propagated")
        return self._dist

    def bounds(self, point: int) -> tuple[float, float]:
        d = self.dist
        return (-d[point, 0], d[0, point])

    def token_bounds(self, token_id: int) -> tuple[tuple[float, float], tuple[float, float]]:
        s, e = self.token_points[token_id]
        return self.bounds(s), self.bounds(e)

    def entails_before(self, first: int, second: int) -> bool:
        """True if every solution has ``first`` ending by the start of ``second``."""
        fe = self.token_points[first][1]
        ss = self.token_points[second][0]
        return self.dist[ss, fe] <= EPS

    def may_overlap(self, a: int, b: int) -> bool:
        return not (self.entails_before(a, b) or self.entails_before(b, a))

    def earliest_schedule(self) -> dict[int, float]:
        if not self._closed:
            raise NotPropagated("propagate the network first")
        if not self._consistent:
            raise NotPropagated("network is inconsistent")
        lb = -self._dist[:, 0]
        return {p.id: float(lb[p.id]) + 0.0 for p in self.points}

    def earliest_array(self) -> np.ndarray:
        return -self.dist[:, 0]

    def propagate(self) -> Consistent | Inconsistent:
        """Recompute the all-pairs closure from the raw constraint list."""
        n = self.size
        dist = np.full((n, n), INF)
        np.fill_diagonal(dist, 0.0)
        pred = np.tile(np.arange(n)[:, None], (1, n))
        for c in self.constraints:
            if c.upper < dist[c.source, c.target]:
                dist[c.source, c.target] = c.upper
                pred[c.source, c.target] = c.source
            if -c.lower < dist[c.target, c.source]:
                dist[c.target, c.source] = -c.lower
                pred[c.target, c.source] = c.target
        _floyd_warshall(dist, pred)
        self._dist = dist
        self._closed = True
        neg = np.flatnonzero(np.diagonal(dist) < -EPS)
        if neg.size:
            self._consistent = False
            return Inconsistent(self._cycle(pred, int(neg[0])))
        self._consistent = True
        return Consistent({p: (float(-dist[p, 0]), float(dist[0, p])) for p in range(n)})

    def _cycle(self, pred: np.ndarray, start: int) -> tuple:
        seq = [start]
        cur = start
        for _ in range(self.size + 1):
            cur = int(pred[start, cur])
            if cur in seq:
                seq.append(cur)
                break
            seq.append(cur)
        return tuple(reversed(seq))

    def replay(self, schedule: dict[int, float], constraints: Iterable[StnConstraint] | None = None) -> list:
        """Constraints violated by a concrete assignment of times (empty when valid)."""
        bad = []
        for c in constraints if constraints is not None else self.constraints:
            delta = schedule[c.target] - schedule[c.source]
            if delta < c.lower - 1e-6 or delta > c.upper + 1e-6:
                bad.append(c)
        return bad


def add_token_constraints(stn: STN, token: Token) -> tuple[int, int]:
    return stn.add_token_constraints(token)


def propagate(stn: STN) -> Consistent | Inconsistent:
    return stn.propagate()


def earliest_schedule(stn: STN) -> dict[int, float]:
    return stn.earliest_schedule()
