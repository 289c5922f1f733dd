"""Turn raw scenario inputs into the compact symbolic context used for prompting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .scenario import (
    DEFAULT_DT,
    TIME_ATOL,
    HazardAlert,
    NavigationPlan,
    Scenario,
    VehicleState,
)

Waypoint = Tuple[float, float, float]


@dataclass(frozen=True)
class ValidationConfig:
    delta_t_max: float = 2.0  # s, alert staleness bound
    history_window_s: float = 2.0  # s, ego history kept
    nav_horizon: int = 6  # waypoints kept beyond the current one

    def __post_init__(self) -> None:
        if not (self.delta_t_max > 0 and self.history_window_s > 0 and self.nav_horizon > 0):
            raise ValueError("validation parameters must all be positive")


@dataclass(frozen=True)
class ContextPackage:
    hazard: Optional[HazardAlert]
    nav_eff: Tuple[Waypoint, ...]
    ego_history: Tuple[VehicleState, ...]
    t_now: float
    dt: float = DEFAULT_DT
    nav_start: int = 0

    @property
    def ego_now(self) -> Optional[VehicleState]:
        return self.ego_history[-1] if self.ego_history else None


def validate_hazard(
    h: HazardAlert, nav: NavigationPlan, t_now: float, cfg: ValidationConfig
) -> Optional[HazardAlert]:
    """Return ``h`` when it lies short of the route's final waypoint along x and is fresh.

    Both tests are strict: the destination's longitudinal coordinate must
    exceed the hazard's, and ``|t_h - t_now|`` must be below ``delta_t_max``.
    """
    route_ok = nav.destination[0] > h.x
    fresh = abs(h.t_h - t_now) < cfg.delta_t_max
    return h if (route_ok and fresh) else None


def filter_navigation(nav: NavigationPlan, cfg: ValidationConfig) -> List[Waypoint]:
    k = nav.current_index
    return list(nav.waypoints[k : k + cfg.nav_horizon + 1])


def filter_ego_history(
    states: Sequence[VehicleState], t_now: float, cfg: ValidationConfig, dt: float = DEFAULT_DT
) -> List[VehicleState]:
    # closed window [t_now - K, t_now]; TIME_ATOL absorbs k*dt rounding
    lo = t_now - cfg.history_window_s - TIME_ATOL
    hi = t_now + TIME_ATOL
    return [s for s in states if lo <= s.k * dt <= hi]


def build_context(scenario: Scenario, t_now: float, cfg: ValidationConfig) -> ContextPackage:
    hazard = None
    if scenario.hazard is not None:
        hazard = validate_hazard(scenario.hazard, scenario.nav, t_now, cfg)
    nav_eff = filter_navigation(scenario.nav, cfg)
    history = filter_ego_history(scenario.agents[scenario.ego_id], t_now, cfg, scenario.dt)
    return ContextPackage(
        hazard=hazard,
        nav_eff=tuple(nav_eff),
        ego_history=tuple(history),
        t_now=t_now,
        dt=scenario.dt,
        nav_start=scenario.nav.current_index,
    )
