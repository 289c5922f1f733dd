"""Residual trajectory fusion: add per-waypoint corrections to the nominal plan."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

from .planner import ResidualSet
from .scenario import Trajectory

Point2 = Tuple[float, float]


class ResidualLengthError(ValueError):
    """Residual count does not match the number of nominal waypoints."""


@dataclass(frozen=True)
class OptimizedPlan:
    waypoints: Tuple[Point2, ...]
    source_nominal: Tuple[Point2, ...]
    residuals_applied: ResidualSet
    times: Optional[Tuple[float, ...]] = None

    def __len__(self) -> int:
        return len(self.waypoints)

    def to_trajectory(self, agent_id: str = "ego") -> Trajectory:
        if self.times is None:
            raise ValueError("plan carries no timestamps")
        return Trajectory(tuple((t, x, y) for t, (x, y) in zip(self.times, self.waypoints)), agent_id)


def _nominal_points(nominal: Union[Trajectory, Sequence[Sequence[float]]]):
    if isinstance(nominal, Trajectory):
        return tuple((p[1], p[2]) for p in nominal.points), tuple(p[0] for p in nominal.points)
    return tuple((float(p[0]), float(p[1])) for p in nominal), None


def apply_residuals(nominal: Union[Trajectory, Sequence[Sequence[float]]], deltas: ResidualSet) -> OptimizedPlan:
    """Element-wise ``g_j + delta_j`` with no smoothing or reordering."""
    points, times = _nominal_points(nominal)
    if len(deltas.deltas) != len(points):
        raise ResidualLengthError(
            f"{len(deltas.deltas)} residuals for {len(points)} nominal waypoints"
        )
    fused = tuple((gx + dx, gy + dy) for (gx, gy), (dx, dy) in zip(points, deltas.deltas))
    return OptimizedPlan(fused, points, deltas, times)


def _shrink_factor(ax: float, ay: float, dx: float, dy: float, limit: float) -> float:
    """Largest alpha in [0, 1] with |a + alpha*d| <= limit, or 0 if none exists."""
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return 0.0
    ad = ax * dx + ay * dy
    aa = ax * ax + ay * ay
    disc = ad * ad - dd * (aa - limit * limit)
    if disc < 0:
        return 0.0
    alpha = (-ad + math.sqrt(disc)) / dd
    return min(1.0, max(0.0, alpha))


def clamp_kinematic(plan: OptimizedPlan, max_step: float) -> OptimizedPlan:
    """Cap consecutive waypoint spacing at ``max_step``.

    Walks the plan in order; whenever a fused waypoint is too far from its
    (already clamped) predecessor, its residual is scaled back toward the
    nominal waypoint.  If even the nominal waypoint is too far the residual is
    dropped entirely.
    """
    if not max_step > 0:
        raise ValueError("max_step must be positive")
    nominal = plan.source_nominal
    deltas = list(plan.residuals_applied.deltas)
    out = [plan.waypoints[0]] if plan.waypoints else []
    for j in range(1, len(plan.waypoints)):
        px, py = out[-1]
        wx, wy = plan.waypoints[j]
        if math.hypot(wx - px, wy - py) <= max_step:
            out.append((wx, wy))
            continue
        gx, gy = nominal[j]
        dx, dy = deltas[j]
        alpha = _shrink_factor(gx - px, gy - py, dx, dy, max_step)
        deltas[j] = (alpha * dx, alpha * dy)
        out.append((gx + deltas[j][0], gy + deltas[j][1]))
    residuals = ResidualSet(
        tuple(deltas),
        reasoning=plan.residuals_applied.reasoning,
        fallback=plan.residuals_applied.fallback,
        error=plan.residuals_applied.error,
        meta=plan.residuals_applied.meta,
    )
    return OptimizedPlan(tuple(out), nominal, residuals, plan.times)
