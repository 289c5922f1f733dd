"""Domain types and constant-velocity kinematics in the roadside-unit frame.

All positions are metres in a frame centred on the roadside unit with
x longitudinal, y lateral (to the right) and z up.  Planning and metric code
only ever looks at (x, y); z is carried along untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DT = 0.1  # s, 10 Hz frame cadence
TIME_ATOL = 1e-9  # s, tolerance for timestamp comparisons on a float clock

Point2 = Tuple[float, float]


class InvalidStateError(ValueError):
    """Raised when a kinematic input is non-finite or otherwise unusable."""


class ScenarioFormatError(ValueError):
    """Raised when a scenario document does not follow the JSON schema."""


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class FrameRsu:
    """Orthonormal reference frame centred at a roadside unit."""

    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    x_up: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    y_right: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    z_up: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        axes = np.array([self.x_up, self.y_right, self.z_up], dtype=float)
        if not np.allclose(axes @ axes.T, np.eye(3), atol=1e-9):
            raise ValueError("frame axes must be orthonormal")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw: float = 0.0
    agent_id: str = ""
    k: int = 0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.z, self.vx, self.vy, self.yaw))

    @property
    def xy(self) -> Point2:
        return (self.x, self.y)

    def time(self, dt: float) -> float:
        return self.k * dt


@dataclass(frozen=True)
class HazardAlert:
    """Collision location broadcast by the roadside unit.

    ``t_h`` is read on the scenario clock: validation compares it directly
    against the current time, and prompts report ``t_h - t_now``.
    """

    x: float
    y: float
    z: float = 0.0
    t_h: float = 0.0
    issue_time: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.t_h, self.issue_time)):
            raise InvalidStateError("hazard fields must be finite")
        if self.t_h < 0:
            raise InvalidStateError("hazard time t_h must be >= 0")

    @property
    def xy(self) -> Point2:
        return (self.x, self.y)


@dataclass(frozen=True)
class NavigationPlan:
    waypoints: Tuple[Tuple[float, float, float], ...]
    current_index: int = 0

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("navigation plan must contain at least one waypoint")
        if not 0 <= self.current_index < len(self.waypoints):
            raise ValueError(
                f"current_index {self.current_index} outside 0..{len(self.waypoints) - 1}"
            )

    @property
    def destination(self) -> Tuple[float, float, float]:
        return self.waypoints[-1]


@dataclass(frozen=True)
class Trajectory:
    """Timed 2D polyline: ``points`` are (t, x, y) with strictly increasing t."""

    points: Tuple[Tuple[float, float, float], ...]
    agent_id: str = ""

    def __post_init__(self) -> None:
        pts = tuple((float(t), float(x), float(y)) for t, x, y in self.points)
        object.__setattr__(self, "points", pts)
        for t, x, y in pts:
            if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y)):
                raise InvalidStateError("trajectory points must be finite")
        for (t0, _, _), (t1, _, _) in zip(pts, pts[1:]):
            if not t1 > t0:
                raise InvalidStateError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=float)

    @property
    def xy(self) -> np.ndarray:
        return np.array([(p[1], p[2]) for p in self.points], dtype=float).reshape(-1, 2)

    @classmethod
    def from_arrays(cls, times: Iterable[float], xy: Iterable[Sequence[float]], agent_id: str = "") -> "Trajectory":
        return cls(tuple((t, p[0], p[1]) for t, p in zip(times, xy)), agent_id)

    def to_list(self) -> List[List[float]]:
        return [list(p) for p in self.points]


@dataclass(frozen=True)
class Scenario:
    agents: Mapping[str, Tuple[VehicleState, ...]]
    ego_id: str
    nav: NavigationPlan
    hazard: Optional[HazardAlert] = None
    dt: float = DEFAULT_DT
    meta: Mapping[str, object] = field(default_factory=dict)
    t_now: Optional[float] = None

    def __post_init__(self) -> None:
        if self.ego_id not in self.agents:
            raise ScenarioFormatError(f"ego_id {self.ego_id!r} not among agents")
        if not self.dt > 0:
            raise ScenarioFormatError("dt must be positive")
        grids = {tuple(s.k for s in states) for states in self.agents.values()}
        if len(grids) > 1:
            raise ScenarioFormatError("all agents must share the same timestep grid")

    @property
    def scenario_id(self) -> str:
        return str(self.meta.get("id", "scenario"))

    @property
    def steps(self) -> Tuple[int, ...]:
        return tuple(s.k for s in self.agents[self.ego_id])

    @property
    def current_time(self) -> float:
        """Planning time on the scenario clock (``t_now`` or the 2 s history mark)."""
        if self.t_now is not None:
            return float(self.t_now)
        last = self.steps[-1] * self.dt
        return min(2.0, last)

    @property
    def current_step(self) -> int:
        return int(round(self.current_time / self.dt))

    @property
    def surrounding_ids(self) -> List[str]:
        return sorted(a for a in self.agents if a != self.ego_id)

    def state_at(self, agent_id: str, k: int) -> VehicleState:
        for s in self.agents[agent_id]:
            if s.k == k:
                return s
        raise KeyError(f"agent {agent_id!r} has no state at step {k}")

    def states_at(self, k: int) -> Dict[str, VehicleState]:
        return {a: self.state_at(a, k) for a in self.agents}

    # -- JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "dt": self.dt,
            "ego_id": self.ego_id,
            "hazard": None
            if self.hazard is None
            else {
                "x": self.hazard.x,
                "y": self.hazard.y,
                "z": self.hazard.z,
                "t_h": self.hazard.t_h,
                "issue_time": self.hazard.issue_time,
            },
            "nav": {
                "waypoints": [list(w) for w in self.nav.waypoints],
                "current_index": self.nav.current_index,
            },
            "agents": {
                aid: [[s.k, s.x, s.y, s.z, s.vx, s.vy, s.yaw] for s in states]
                for aid, states in sorted(self.agents.items())
            },
            "meta": dict(self.meta),
        }
        if self.t_now is not None:
            doc["t_now"] = self.t_now
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scenario":
        try:
            agents = {
                str(aid): tuple(
                    VehicleState(
                        x=float(r[1]), y=float(r[2]), z=float(r[3]),
                        vx=float(r[4]), vy=float(r[5]), yaw=float(r[6]),
                        agent_id=str(aid), k=int(r[0]),
                    )
                    for r in rows
                )
                for aid, rows in doc["agents"].items()
            }
            hz = doc.get("hazard")
            hazard = None
            if hz is not None:
                hazard = HazardAlert(
                    x=float(hz["x"]), y=float(hz["y"]), z=float(hz.get("z", 0.0)),
                    t_h=float(hz["t_h"]), issue_time=float(hz.get("issue_time", 0.0)),
                )
            nav = NavigationPlan(
                waypoints=tuple(
                    (float(w[0]), float(w[1]), float(w[2]) if len(w) > 2 else 0.0)
                    for w in doc["nav"]["waypoints"]
                ),
                current_index=int(doc["nav"].get("current_index", 0)),
            )
            t_now = doc.get("t_now")
            return cls(
                agents=agents,
                ego_id=str(doc["ego_id"]),
                nav=nav,
                hazard=hazard,
                dt=float(doc.get("dt", DEFAULT_DT)),
                meta=dict(doc.get("meta", {})),
                t_now=None if t_now is None else float(t_now),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ScenarioFormatError(f"malformed scenario document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def propagate_state(s: VehicleState, yaw_rate: float, dt: float) -> VehicleState:
    """Advance one step under constant velocity and constant grade."""
    if not (s.is_finite() and math.isfinite(yaw_rate) and math.isfinite(dt)):
        raise InvalidStateError("non-finite kinematic input")
    if dt <= 0:
        raise InvalidStateError("dt must be positive")
    return replace(
        s,
        x=s.x + s.vx * dt,
        y=s.y + s.vy * dt,
        yaw=normalize_angle(s.yaw + yaw_rate * dt),
        k=s.k + 1,
    )


def rollout(s: VehicleState, yaw_rates: Sequence[float], dt: float, t0: float = 0.0) -> Trajectory:
    """Roll a state forward, one step per yaw-rate sample.

    Positions use the closed form ``x0 + v * (n * dt)`` rather than summing
    n increments, so long rollouts do not accumulate rounding drift; the
    result matches step-by-step ``propagate_state`` to rounding error.
    """
    if not (s.is_finite() and math.isfinite(dt)):
        raise InvalidStateError("non-finite kinematic input")
    if dt <= 0:
        raise InvalidStateError("dt must be positive")
    if not all(math.isfinite(r) for r in yaw_rates):
        raise InvalidStateError("non-finite yaw rate")
    points = [(t0, s.x, s.y)]
    for n in range(1, len(yaw_rates) + 1):
        elapsed = n * dt
        points.append((t0 + elapsed, s.x + s.vx * elapsed, s.y + s.vy * elapsed))
    return Trajectory(tuple(points), s.agent_id)


def rollout_states(s: VehicleState, yaw_rates: Sequence[float], dt: float) -> List[VehicleState]:
    """Step-by-step composition of ``propagate_state`` (keeps yaw and step index)."""
    out = [s]
    for r in yaw_rates:
        out.append(propagate_state(out[-1], r, dt))
    return out


def constant_velocity_at(s: VehicleState, t_state: float, times: Sequence[float]) -> Trajectory:
    """Predicted positions of ``s`` (observed at ``t_state``) at the given times."""
    return Trajectory(
        tuple((t, s.x + s.vx * (t - t_state), s.y + s.vy * (t - t_state)) for t in times),
        s.agent_id,
    )


def stationary(point: Point2, times: Sequence[float], agent_id: str = "hazard") -> Trajectory:
    return Trajectory(tuple((t, point[0], point[1]) for t in times), agent_id)
