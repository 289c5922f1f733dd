"""Synthetic occluded-hazard scenarios, the end-to-end pipeline, evaluation and plots."""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import math
import random
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import requests

from . import metrics
from .alignment import (
    TextPrompt,
    TokenBudgetError,
    VisualPrompt,
    encode_text_prompt,
    estimate_tokens,
    load_instruction,
    reduce_tokens,
    visual_tokens,
)
from .bev import (
    BevMap,
    GridSpec,
    from_pgm,
    metric_to_pixel,
    overlay_axes,
    paint_box,
    pgm_base64,
    pool,
    rasterize,
    to_pgm,
    to_ppm,
)
from .config import StageConfig
from .planner import BackendConfig, BackendError, ResidualSet, geometric_avoidance, plan
from .rtf import OptimizedPlan, apply_residuals, clamp_kinematic
from .scenario import (
    TIME_ATOL,
    HazardAlert,
    NavigationPlan,
    Scenario,
    Trajectory,
    VehicleState,
    constant_velocity_at,
)
from .structuring import ContextPackage, build_context

logger = logging.getLogger(__name__)

LOCATIONS = ("small_town", "downtown", "rural", "highway", "intersection")
WEATHERS = ("clear", "cloudy", "rainy", "wet")
TIMES_OF_DAY = ("noon", "sunset", "night")
# weather x time-of-day combinations present in the evaluation table
CONDITIONS = tuple(
    (w, t) for t in TIMES_OF_DAY for w in WEATHERS if not (t == "night" and w in ("cloudy", "wet"))
)
OCCLUSION_RADIUS = 1.5  # m, vehicle body radius used for line-of-sight checks
STAGES = ("structuring", "bev", "alignment", "planner", "rtf")


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioProfile:
    location: str = "highway"
    weather: str = "clear"
    time_of_day: str = "noon"
    density: int = 3
    seed: int = 0
    hazard_prob: float = 1.0

    def __post_init__(self) -> None:
        if self.location not in LOCATIONS:
            raise ValueError(f"unknown location {self.location!r}")
        if self.weather not in WEATHERS:
            raise ValueError(f"unknown weather {self.weather!r}")
        if self.time_of_day not in TIMES_OF_DAY:
            raise ValueError(f"unknown time of day {self.time_of_day!r}")
        if self.density < 1:
            raise ValueError("density must be >= 1")
        if not 0.0 <= self.hazard_prob <= 1.0:
            raise ValueError("hazard_prob must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "ScenarioProfile":
        """``location/weather/time_of_day[/density[/hazard_prob]]``."""
        parts = text.split("/")
        if len(parts) < 3:
            raise ValueError("profile must look like location/weather/time_of_day[/density[/hazard_prob]]")
        kw: Dict[str, Any] = dict(location=parts[0], weather=parts[1], time_of_day=parts[2], seed=seed)
        if len(parts) > 3:
            kw["density"] = int(parts[3])
        if len(parts) > 4:
            kw["hazard_prob"] = float(parts[4])
        return cls(**kw)


_SPEED_RANGE = {
    "highway": (14.0, 16.0),
    "rural": (12.0, 16.0),
    "small_town": (11.0, 13.0),
    "downtown": (11.0, 13.0),
    "intersection": (11.0, 14.0),
}
_CURVE_PROB = {"highway": 0.4, "rural": 0.5, "small_town": 0.3, "downtown": 0.2, "intersection": 0.3}

HISTORY_S = 2.0
FUTURE_S = 2.5
ROUTE_WAYPOINTS = 40
ROUTE_CADENCE = 0.5  # s between route waypoints at the ego's cruise speed
MAX_ROUTE_HEADING = 0.25  # rad


def _route(start: Tuple[float, float], speed: float, straight_until: int, curvature: float) -> List[Tuple[float, float, float]]:
    step = speed * ROUTE_CADENCE
    x, y, heading = start[0], start[1], 0.0
    pts = [(x, y, 0.0)]
    for j in range(1, ROUTE_WAYPOINTS):
        x += step * math.cos(heading)
        y += step * math.sin(heading)
        pts.append((x, y, 0.0))
        if j >= straight_until:
            heading = max(-MAX_ROUTE_HEADING, min(MAX_ROUTE_HEADING, heading + curvature * step))
    return pts


def _point_along(route: Sequence[Tuple[float, float, float]], start: int, dist: float):
    """Point and unit rightward normal at arc length ``dist`` past ``route[start]``."""
    remaining = dist
    for j in range(start, len(route) - 1):
        ax, ay, _ = route[j]
        bx, by, _ = route[j + 1]
        seg = math.hypot(bx - ax, by - ay)
        if remaining <= seg:
            f = remaining / seg
            tx, ty = (bx - ax) / seg, (by - ay) / seg
            return (ax + f * (bx - ax), ay + f * (by - ay)), (-ty, tx)
        remaining -= seg
    raise ValueError("route too short for requested arc length")


def _cv_states(agent_id: str, pos_now: Tuple[float, float], vel: Tuple[float, float], yaw: float,
               t_now: float, dt: float, n_steps: int) -> Tuple[VehicleState, ...]:
    return tuple(
        VehicleState(
            x=pos_now[0] + vel[0] * (k * dt - t_now),
            y=pos_now[1] + vel[1] * (k * dt - t_now),
            z=0.0, vx=vel[0], vy=vel[1], yaw=yaw, agent_id=agent_id, k=k,
        )
        for k in range(n_steps)
    )


def generate_scenario(profile: ScenarioProfile, dt: float = 0.1) -> Scenario:
    """Deterministic occluded-hazard scene for ``profile``.

    The ego cruises along a straight or gently curving route.  With
    probability ``hazard_prob`` a crashed vehicle sits on the route 18-28 m
    ahead at planning time, the roadside unit reports it, and (for density
    >= 2) a faster lead vehicle between ego and crash is pulling out of the
    lane, hiding the crash from the ego.  Remaining agents drive on a
    parallel carriageway at least 16 m to the side.
    """
    rng = random.Random(
        f"{profile.seed}|{profile.location}|{profile.weather}|{profile.time_of_day}|{profile.density}"
    )
    lo, hi = _SPEED_RANGE[profile.location]
    if profile.weather in ("rainy", "wet"):
        hi = max(lo, hi - 1.0)
    speed = rng.uniform(lo, hi)
    t_now = HISTORY_S
    n_steps = int(round((HISTORY_S + FUTURE_S) / dt)) + 1
    now_index = int(round(t_now / ROUTE_CADENCE))

    x0 = rng.uniform(-60.0, -40.0)
    curvature = 0.0
    if rng.random() < _CURVE_PROB[profile.location]:
        curvature = rng.choice((-1.0, 1.0)) * rng.uniform(0.003, 0.008)
    route = _route((x0, 0.0), speed, now_index, curvature)

    agents: Dict[str, Tuple[VehicleState, ...]] = {
        "ego": _cv_states("ego", (x0 + speed * t_now, 0.0), (speed, 0.0), 0.0, t_now, dt, n_steps)
    }
    ego_now = (agents["ego"][0].x + speed * t_now, 0.0)

    hazard = None
    others = profile.density
    if rng.random() < profile.hazard_prob:
        dist = rng.uniform(18.0, min(1.9 * speed, 28.0))
        lateral = rng.uniform(-2.0, 2.0)
        if profile.time_of_day == "night":
            lateral *= 0.75
        (px, py), (nx, ny) = _point_along(route, now_index, dist)
        hx, hy = px + lateral * nx, py + lateral * ny
        t_h = rng.uniform(0.5, 1.5)
        hazard = HazardAlert(hx, hy, 0.0, t_h=t_h, issue_time=rng.uniform(0.0, t_h))
        agents["crash"] = _cv_states("crash", (hx, hy), (0.0, 0.0), rng.uniform(-math.pi, math.pi),
                                     t_now, dt, n_steps)
        others -= 1
        if others > 0:
            ex, ey = hx - ego_now[0], hy - ego_now[1]
            span = math.hypot(ex, ey)
            gap = rng.uniform(10.0, span - 8.0)
            lead_pos = (ego_now[0] + gap * ex / span, ego_now[1] + gap * ey / span)
            side = -1.0 if lateral > 0 else 1.0 if lateral < 0 else rng.choice((-1.0, 1.0))
            vel = (speed + rng.uniform(0.5, 2.5), side * rng.uniform(1.0, 2.0))
            agents["lead"] = _cv_states("lead", lead_pos, vel, math.atan2(vel[1], vel[0]), t_now, dt, n_steps)
            others -= 1

    for i in range(others):
        lane_y = rng.choice((-1.0, 1.0)) * rng.uniform(16.0, 22.0)
        pos = (ego_now[0] + rng.uniform(-30.0, 60.0), lane_y)
        direction = rng.choice((1.0, -1.0))
        vx = direction * rng.uniform(8.0, 16.0)
        yaw = 0.0 if direction > 0 else math.pi
        agents[f"traffic{i}"] = _cv_states(f"traffic{i}", pos, (vx, 0.0), yaw, t_now, dt, n_steps)

    scenario_id = f"{profile.location}-{profile.weather}-{profile.time_of_day}-{profile.seed:04d}"
    return Scenario(
        agents=agents,
        ego_id="ego",
        nav=NavigationPlan(tuple(route), current_index=now_index),
        hazard=hazard,
        dt=dt,
        meta={
            "id": scenario_id,
            "location": profile.location,
            "weather": profile.weather,
            "time_of_day": profile.time_of_day,
            "density": profile.density,
            "seed": profile.seed,
        },
        t_now=t_now,
    )


def suite_profiles(n: int = 50, seed: int = 0) -> List[ScenarioProfile]:
    """Occlusion suite cycling through every weather/time condition and location."""
    return [
        ScenarioProfile(
            location=LOCATIONS[i % len(LOCATIONS)],
            weather=CONDITIONS[i % len(CONDITIONS)][0],
            time_of_day=CONDITIONS[i % len(CONDITIONS)][1],
            density=1 + i % 4,
            seed=seed + i,
            hazard_prob=1.0,
        )
        for i in range(n)
    ]


def generate_suite(n: int = 50, seed: int = 0) -> List[Scenario]:
    return [generate_scenario(p) for p in suite_profiles(n, seed)]


# ---------------------------------------------------------------------------
# perception helpers
# ---------------------------------------------------------------------------


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    f = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + f * ab)))


def visible_agents(ego: VehicleState, others: Sequence[VehicleState],
                   radius: float = OCCLUSION_RADIUS) -> List[VehicleState]:
    """Agents whose centre is in line of sight from the ego.

    An agent is hidden when a nearer agent's body (a disc of ``radius``)
    crosses the sight line.
    """
    e = np.array(ego.xy)
    pos = {a.agent_id: np.array(a.xy) for a in others}
    dist = {aid: float(np.linalg.norm(p - e)) for aid, p in pos.items()}
    out = []
    for a in others:
        target = pos[a.agent_id]
        hidden = any(
            dist[o.agent_id] < dist[a.agent_id]
            and _segment_distance(pos[o.agent_id], e, target) < radius
            for o in others
            if o.agent_id != a.agent_id
        )
        if not hidden:
            out.append(a)
    return out


def agent_positions(scenario: Scenario, agent_id: str, times: Sequence[float]) -> Trajectory:
    """Recorded positions at ``times``, extrapolated at constant velocity off the record."""
    states = scenario.agents[agent_id]
    by_k = {s.k: s for s in states}
    pts = []
    for t in times:
        k = int(round(t / scenario.dt))
        if abs(k * scenario.dt - t) <= TIME_ATOL and k in by_k:
            s = by_k[k]
            pts.append((t, s.x, s.y))
            continue
        earlier = [s for s in states if s.k * scenario.dt <= t + TIME_ATOL]
        ref = earlier[-1] if earlier else states[0]
        tau = t - ref.k * scenario.dt
        pts.append((t, ref.x + ref.vx * tau, ref.y + ref.vy * tau))
    return Trajectory(tuple(pts), agent_id)


def ground_truth_surroundings(scenario: Scenario, times: Sequence[float]) -> List[Trajectory]:
    return [agent_positions(scenario, aid, times) for aid in scenario.surrounding_ids]


def plan_times(t_now: float, m: int, cadence: float) -> Tuple[float, ...]:
    return tuple(t_now + j * cadence for j in range(m))


def nominal_trajectory(ctx: ContextPackage, cadence: float) -> Trajectory:
    times = plan_times(ctx.t_now, len(ctx.nav_eff), cadence)
    return Trajectory(tuple((t, w[0], w[1]) for t, w in zip(times, ctx.nav_eff)), "ego")


def ground_truth_plan(scenario: Scenario, stage_cfg: StageConfig = StageConfig(),
                      backend_cfg: BackendConfig = BackendConfig()) -> OptimizedPlan:
    """The geometric oracle's plan with every agent visible (evaluation target)."""
    t_now = scenario.current_time
    ctx = build_context(scenario, t_now, stage_cfg.validation)
    nominal = nominal_trajectory(ctx, stage_cfg.waypoint_dt)
    surroundings = ground_truth_surroundings(scenario, nominal.times)
    cfg = replace(backend_cfg, kind="geometric", endpoint=None)
    residuals = geometric_avoidance(ctx, nominal, surroundings, cfg)
    return apply_residuals(nominal, residuals)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    scenario_id: str
    scenario: Scenario
    backend: str
    nominal: Trajectory
    optimized: OptimizedPlan
    residuals: ResidualSet
    latency_ms: Dict[str, float]
    surroundings_pred: List[Trajectory]
    pooled_grid: GridSpec
    ego_xy: Tuple[float, float]
    fallback: bool = False
    errors: List[str] = field(default_factory=list)
    tokens: int = 0
    text_prompt: Optional[TextPrompt] = None
    visual: Optional[VisualPrompt] = None
    ctx: Optional[ContextPackage] = None

    @property
    def optimized_trajectory(self) -> Trajectory:
        return self.optimized.to_trajectory("ego")

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "backend": self.backend,
            "scenario": self.scenario.to_dict(),
            "nominal": self.nominal.to_list(),
            "optimized": [list(w) for w in self.optimized.waypoints],
            "residuals": [list(d) for d in self.residuals.deltas],
            "reasoning": self.residuals.reasoning,
            "decision": self.residuals.meta.get("decision"),
            "fallback": self.fallback,
            "errors": list(self.errors),
            "latency_ms": dict(self.latency_ms),
            "tokens": self.tokens,
            "text_prompt": None if self.text_prompt is None else self.text_prompt.text,
            "images": None if self.visual is None else [pgm_base64(self.visual.bev_now), pgm_base64(self.visual.bev_past)],
            "image_timestamps": None if self.visual is None else [self.visual.bev_now.timestamp, self.visual.bev_past.timestamp],
            "pooled_grid": [self.pooled_grid.width, self.pooled_grid.height, self.pooled_grid.scale,
                            self.pooled_grid.anchor_u, self.pooled_grid.anchor_v],
            "ego_xy": list(self.ego_xy),
            "surroundings_pred": {t.agent_id: t.to_list() for t in self.surroundings_pred},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunResult":
        scenario = Scenario.from_dict(doc["scenario"])
        nominal = Trajectory(tuple(tuple(p) for p in doc["nominal"]), "ego")
        meta = {"decision": doc["decision"]} if doc.get("decision") else {}
        residuals = ResidualSet(tuple(tuple(d) for d in doc["residuals"]), reasoning=doc.get("reasoning"),
                                fallback=doc.get("fallback", False), meta=meta)
        optimized = OptimizedPlan(
            tuple(tuple(w) for w in doc["optimized"]),
            tuple((p[1], p[2]) for p in nominal.points),
            residuals,
            tuple(p[0] for p in nominal.points),
        )
        grid = GridSpec(*doc["pooled_grid"])
        visual = None
        if doc.get("images"):
            now_t, past_t = doc["image_timestamps"]
            maps = [BevMap(grid, from_pgm(base64.b64decode(img)), ts)
                    for img, ts in zip(doc["images"], (now_t, past_t))]
            visual = VisualPrompt(maps[0], maps[1])
        return cls(
            scenario_id=doc["scenario_id"],
            scenario=scenario,
            backend=doc["backend"],
            nominal=nominal,
            optimized=optimized,
            residuals=residuals,
            latency_ms=dict(doc["latency_ms"]),
            surroundings_pred=[Trajectory(tuple(tuple(p) for p in pts), aid)
                               for aid, pts in doc["surroundings_pred"].items()],
            pooled_grid=grid,
            ego_xy=tuple(doc["ego_xy"]),
            fallback=doc.get("fallback", False),
            errors=list(doc.get("errors", [])),
            tokens=int(doc.get("tokens", 0)),
            visual=visual,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunResult":
        return cls.from_dict(json.loads(text))


def pooled_grid(stage_cfg: StageConfig) -> GridSpec:
    g = stage_cfg.raster_grid
    f = stage_cfg.pool_factor
    return GridSpec(g.width // f, g.height // f, g.scale * f, g.anchor_u // f, g.anchor_v // f)


def build_visual_prompt(scenario: Scenario, ctx: ContextPackage, visible_ids: Sequence[str],
                        stage_cfg: StageConfig) -> VisualPrompt:
    k_now = scenario.current_step
    k_past = max(k_now - int(round(stage_cfg.past_offset_s / scenario.dt)), scenario.steps[0])
    hazard = ctx.hazard.xy if ctx.hazard is not None else None
    maps = []
    for k, ts in ((k_now, ctx.t_now), (k_past, ctx.t_now - stage_cfg.past_offset_s)):
        ego = scenario.state_at(scenario.ego_id, k)
        agents = [scenario.state_at(a, k) for a in visible_ids]
        raw = rasterize(agents, ego, stage_cfg.raster_grid, hazard, timestamp=ts)
        maps.append(pool(overlay_axes(raw, stage_cfg.overlay), stage_cfg.pool_factor))
    return VisualPrompt(maps[0], maps[1], stage_cfg.patch_size)


def run_pipeline(
    scenario: Scenario,
    backend_cfg: BackendConfig = BackendConfig(),
    stage_cfg: StageConfig = StageConfig(),
    session: Optional[requests.Session] = None,
) -> RunResult:
    """structuring -> BEV -> prompts -> planner -> fusion, never without a plan.

    Any stage failure after the nominal plan exists is recorded in ``errors``
    and the nominal plan is kept.
    """
    timer = metrics.StageTimer()
    errors: List[str] = []
    t_now = scenario.current_time
    k_now = scenario.current_step
    grid = pooled_grid(stage_cfg)

    with timer.time("structuring"):
        ctx = build_context(scenario, t_now, stage_cfg.validation)
        nominal = nominal_trajectory(ctx, stage_cfg.waypoint_dt)
        ego_now = scenario.state_at(scenario.ego_id, k_now)
        others = [scenario.state_at(a, k_now) for a in scenario.surrounding_ids]
        visible = visible_agents(ego_now, others)
        surroundings = [constant_velocity_at(s, t_now, nominal.times) for s in visible]
    m = len(nominal)
    residuals = ResidualSet.zeros(m, fallback=True, meta={"backend": backend_cfg.kind})
    tp = vp = None
    tokens = 0

    try:
        with timer.time("bev"):
            vp = build_visual_prompt(scenario, ctx, [s.agent_id for s in visible], stage_cfg)
        with timer.time("alignment"):
            instruction = stage_cfg.instruction or load_instruction()
            tp = encode_text_prompt(ctx, instruction)
            try:
                tp = reduce_tokens(tp, stage_cfg.token_budget, reserved=visual_tokens(vp))
            except TokenBudgetError as exc:
                errors.append(f"alignment: {exc}")
                tp = exc.prompt
            tokens = estimate_tokens(tp, vp)
        with timer.time("planner"):
            try:
                residuals = plan(tp, vp, nominal, backend_cfg, surroundings)
            except BackendError as exc:
                errors.append(f"planner: {exc}")
                residuals = exc.fallback
    except Exception as exc:  # fail-safe: keep the nominal plan
        logger.exception("pipeline stage failed for %s", scenario.scenario_id)
        errors.append(f"{type(exc).__name__}: {exc}")
        residuals = ResidualSet.zeros(m, fallback=True, error=str(exc), meta={"backend": backend_cfg.kind})

    with timer.time("rtf"):
        try:
            optimized = apply_residuals(nominal, residuals)
        except ValueError as exc:
            errors.append(f"rtf: {exc}")
            residuals = ResidualSet.zeros(m, fallback=True, error=str(exc), meta={"backend": backend_cfg.kind})
            optimized = apply_residuals(nominal, residuals)
        if stage_cfg.clamp_max_step is not None:
            optimized = clamp_kinematic(optimized, stage_cfg.clamp_max_step)

    latency = {s: timer.stages.get(s, 0.0) for s in STAGES}
    latency["total"] = timer.total
    return RunResult(
        scenario_id=scenario.scenario_id,
        scenario=scenario,
        backend=backend_cfg.kind,
        nominal=nominal,
        optimized=optimized,
        residuals=residuals,
        latency_ms=latency,
        surroundings_pred=surroundings,
        pooled_grid=grid,
        ego_xy=ego_now.xy,
        fallback=residuals.fallback,
        errors=errors,
        tokens=tokens,
        text_prompt=tp,
        visual=vp,
        ctx=ctx,
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _heading_along(xy: np.ndarray, j: int, fallback: float = 0.0) -> float:
    for a, b in ((j, j + 1), (j - 1, j)):
        if 0 <= a and b < len(xy):
            d = xy[b] - xy[a]
            if np.hypot(*d) > 1e-6:
                return float(math.atan2(d[1], d[0]))
    return fallback


def motion_masks(ego: Trajectory, agents: Sequence[Trajectory], grid: GridSpec,
                 origin: Tuple[float, float], frames: Sequence[int]) -> np.ndarray:
    """Occupancy masks (one per selected frame) of the ego plan plus agents."""
    exy = ego.xy
    agent_xy = [a.xy for a in agents]
    masks = []
    for j in frames:
        cells = np.zeros(grid.shape, dtype=float)
        paint_box(cells, grid, exy[j, 0] - origin[0], exy[j, 1] - origin[1], _heading_along(exy, j))
        for axy in agent_xy:
            paint_box(cells, grid, axy[j, 0] - origin[0], axy[j, 1] - origin[1], _heading_along(axy, j))
        masks.append(cells > 0)
    return np.stack(masks) if masks else np.zeros((0,) + grid.shape, dtype=bool)


def _horizon_slice(times: np.ndarray, t_now: float, horizon: float) -> List[int]:
    return [j for j, t in enumerate(times) if 0 < t - t_now <= horizon + TIME_ATOL]


@dataclass
class Report:
    summary: Dict[str, Any]
    rows: List[Dict[str, Any]]
    buckets: Dict[str, Dict[str, Any]]
    skipped: int = 0

    def to_dict(self) -> dict:
        return {**self.summary, "skipped": self.skipped, "buckets": self.buckets}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.rows:
            writer = csv.DictWriter(buf, fieldnames=list(self.rows[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)
        return buf.getvalue()


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _aggregate(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    c_refined = _mean(r["collision"] for r in rows)
    c_base = _mean(r["baseline_collision"] for r in rows)
    return {
        "n": len(rows),
        "vpq": _mean(r["vpq"] for r in rows),
        "miou": _mean(r["iou"] for r in rows),
        "min_ade_1s": _mean(r["min_ade_1s"] for r in rows),
        "min_ade_2s": _mean(r["min_ade_2s"] for r in rows),
        "min_fde": _mean(r["min_fde"] for r in rows),
        "collision_rate": c_refined,
        "baseline_collision_rate": c_base,
        "crr": metrics.crr(c_base, c_refined) if c_base else None,
        "mcd": _mean(r["mcd"] for r in rows),
    }


def score_run(result: RunResult, gt_plan: Union[OptimizedPlan, Trajectory]) -> Dict[str, Any]:
    scenario = result.scenario
    t_now = scenario.current_time
    pred = result.optimized_trajectory
    gt = gt_plan if isinstance(gt_plan, Trajectory) else gt_plan.to_trajectory("ego")
    times = pred.times
    surroundings = ground_truth_surroundings(scenario, times)

    def horizon_ade(h: float) -> Optional[float]:
        idx = _horizon_slice(times, t_now, h)
        if not idx:
            return None
        sub = lambda tr: Trajectory(tuple(tr.points[j] for j in idx), tr.agent_id)  # noqa: E731
        return metrics.min_ade([sub(pred)], sub(gt))

    future = _horizon_slice(times, t_now, float("inf"))
    if future:
        pred_masks = motion_masks(pred, result.surroundings_pred, result.pooled_grid, result.ego_xy, future)
        gt_masks = motion_masks(gt, surroundings, result.pooled_grid, result.ego_xy, future)
        vpq = metrics.vpq(pred_masks, gt_masks)
        region_iou = metrics.iou(pred_masks.any(axis=0), gt_masks.any(axis=0))
        fde_idx = future
        min_fde = metrics.min_fde(
            [Trajectory(tuple(pred.points[j] for j in fde_idx))], Trajectory(tuple(gt.points[j] for j in fde_idx))
        )
    else:
        vpq = region_iou = min_fde = None

    _, record = metrics.collision_rate(pred, surroundings)
    _, base_record = metrics.collision_rate(result.nominal, surroundings)
    return {
        "scenario_id": result.scenario_id,
        "location": scenario.meta.get("location", ""),
        "weather": scenario.meta.get("weather", ""),
        "time_of_day": scenario.meta.get("time_of_day", ""),
        "backend": result.backend,
        "vpq": vpq,
        "iou": region_iou,
        "min_ade_1s": horizon_ade(1.0),
        "min_ade_2s": horizon_ade(2.0),
        "min_fde": min_fde,
        "collision": int(record.any),
        "baseline_collision": int(base_record.any),
        "mcd": metrics.mcd(pred, surroundings) if surroundings else None,
        "fallback": int(result.fallback),
        "latency_total_ms": result.latency_ms.get("total", 0.0),
    }


def evaluate(results: Sequence[RunResult], gt: Mapping[str, Union[OptimizedPlan, Trajectory]]) -> Report:
    """Score every run against its ground-truth plan and aggregate.

    A scenario counts as one collision frame when the plan passes within
    5 m of any agent anywhere on the horizon.  The baseline for CRR is the
    nominal plan of the same run (what the null backend would output).
    """
    if not results:
        raise ValueError("nothing to evaluate")
    rows: List[Dict[str, Any]] = []
    skipped = 0
    latencies: Dict[str, List[float]] = {}
    for result in sorted(results, key=lambda r: r.scenario_id):
        if result.scenario_id not in gt:
            skipped += 1
            continue
        rows.append(score_run(result, gt[result.scenario_id]))
        for stage, ms in result.latency_ms.items():
            latencies.setdefault(stage, []).append(ms)
    if skipped:
        logger.warning("%d scenario(s) skipped for missing ground truth", skipped)

    summary = _aggregate(rows)
    summary["latency_ms"] = {s: statistics.median(v) for s, v in sorted(latencies.items())}

    buckets: Dict[str, Dict[str, Any]] = {}
    groups: Dict[str, List[Dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault(f"condition/{r['weather']}/{r['time_of_day']}", []).append(r)
        groups.setdefault(f"location/{r['location']}", []).append(r)
    for key in sorted(groups):
        buckets[key] = _aggregate(groups[key])
    return Report(summary, rows, buckets, skipped)


# ---------------------------------------------------------------------------
# plots and benchmarking
# ---------------------------------------------------------------------------

PLOT_UPSCALE = 4
_GRAY = {"occupancy": 90, "nominal": 150, "optimized": 255, "hazard": 200}
_RGB = {"nominal": (60, 120, 255), "optimized": (255, 60, 60), "hazard": (255, 220, 0)}


def _to_canvas(x: float, y: float, grid: GridSpec, origin: Tuple[float, float]) -> Tuple[float, float]:
    s = PLOT_UPSCALE
    return ((x - origin[0]) / grid.scale + grid.anchor_u) * s + s / 2, ((y - origin[1]) / grid.scale + grid.anchor_v) * s + s / 2


def _draw_polyline(canvas: np.ndarray, pts: Sequence[Tuple[float, float]], value) -> None:
    h, w = canvas.shape[:2]
    for (u0, v0), (u1, v1) in zip(pts, pts[1:] or pts):
        n = int(max(abs(u1 - u0), abs(v1 - v0))) + 1
        us = np.rint(np.linspace(u0, u1, n + 1)).astype(int)
        vs = np.rint(np.linspace(v0, v1, n + 1)).astype(int)
        keep = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
        canvas[vs[keep], us[keep]] = value


def render_plot(result: RunResult, color: bool = False) -> np.ndarray:
    grid = result.pooled_grid
    if result.visual is not None:
        occ = result.visual.bev_now.cells
    else:
        occ = np.zeros(grid.shape)
    base = np.kron(occ, np.ones((PLOT_UPSCALE, PLOT_UPSCALE)))
    gray = np.rint(base * _GRAY["occupancy"]).astype(np.uint8)
    canvas = np.repeat(gray[..., None], 3, axis=2) if color else gray
    nominal = [_to_canvas(p[1], p[2], grid, result.ego_xy) for p in result.nominal.points]
    optimized = [_to_canvas(x, y, grid, result.ego_xy) for x, y in result.optimized.waypoints]
    pick = (lambda k: _RGB[k]) if color else (lambda k: _GRAY[k])
    _draw_polyline(canvas, nominal, pick("nominal"))
    _draw_polyline(canvas, optimized, pick("optimized"))
    hz = result.scenario.hazard
    if hz is not None:
        u, v = _to_canvas(hz.x, hz.y, grid, result.ego_xy)
        r = 1.5 * PLOT_UPSCALE
        _draw_polyline(canvas, [(u - r, v - r), (u + r, v + r)], pick("hazard"))
        _draw_polyline(canvas, [(u - r, v + r), (u + r, v - r)], pick("hazard"))
    return canvas


def emit_plot(result: RunResult, path: Union[str, Path]) -> Path:
    """Write the pooled BEV with nominal/optimized polylines; ``.ppm`` gives colour."""
    path = Path(path)
    color = path.suffix.lower() == ".ppm"
    canvas = render_plot(result, color=color)
    path.write_bytes(to_ppm(canvas) if color else to_pgm(canvas / 255.0))
    return path


def bench(scenario: Scenario, backend_cfg: BackendConfig = BackendConfig(kind="geometric"),
          stage_cfg: StageConfig = StageConfig(), reps: int = 30, warmup: int = 3) -> Dict[str, Any]:
    """Median per-stage and end-to-end latency of ``run_pipeline`` in ms."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for _ in range(warmup):
        run_pipeline(scenario, backend_cfg, stage_cfg)
    end_to_end: List[float] = []
    per_stage: Dict[str, List[float]] = {s: [] for s in STAGES}
    for _ in range(reps):
        t0 = time.perf_counter()
        result = run_pipeline(scenario, backend_cfg, stage_cfg)
        end_to_end.append((time.perf_counter() - t0) * 1e3)
        for s in STAGES:
            per_stage[s].append(result.latency_ms[s])
    stages = {s: statistics.median(v) for s, v in per_stage.items()}
    return {
        "reps": reps,
        "backend": backend_cfg.kind,
        "stages_ms": stages,
        "stage_sum_ms": sum(stages.values()),
        "end_to_end_ms": statistics.median(end_to_end),
    }
