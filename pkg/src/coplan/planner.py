"""Planner backends that turn prompts into per-waypoint residuals.

Three backends share one contract: ``null`` keeps the nominal plan,
``geometric`` runs a deterministic lateral-offset / stop search, and
``remote`` asks an HTTP inference service.  Every backend returns exactly
one residual per nominal waypoint; failures fall back to all-zero residuals
so the nominal plan is kept.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .alignment import TextPrompt, VisualPrompt
from .bev import pgm_base64
from .metrics import nearest_distances
from .scenario import Trajectory
from .structuring import ContextPackage

logger = logging.getLogger(__name__)

BACKENDS = ("null", "geometric", "remote")


class ResidualParseError(ValueError):
    """The response body holds no usable residual array."""


class ResidualLengthMismatch(ResidualParseError):
    pass


class ResidualValueError(ResidualParseError):
    pass


@dataclass(frozen=True)
class ResidualSet:
    deltas: Tuple[Tuple[float, float], ...]
    reasoning: Optional[str] = None
    fallback: bool = False
    error: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        deltas = tuple((float(dx), float(dy)) for dx, dy in self.deltas)
        for dx, dy in deltas:
            if not (math.isfinite(dx) and math.isfinite(dy)):
                raise ResidualValueError("residuals must be finite")
        object.__setattr__(self, "deltas", deltas)

    def __len__(self) -> int:
        return len(self.deltas)

    @classmethod
    def zeros(cls, m: int, **kwargs) -> "ResidualSet":
        return cls(((0.0, 0.0),) * m, **kwargs)

    @property
    def is_zero(self) -> bool:
        return all(dx == 0.0 and dy == 0.0 for dx, dy in self.deltas)


class BackendError(RuntimeError):
    """A backend could not produce residuals; ``fallback`` keeps the nominal plan."""

    def __init__(self, message: str, fallback: ResidualSet):
        super().__init__(message)
        self.fallback = fallback


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "null"
    endpoint: Optional[str] = None
    timeout: float = 5.0  # s
    max_lateral_offset: float = 3.5  # m, one lane
    safety_clearance: float = 5.0  # m
    lateral_step: float = 0.5  # m
    max_new_tokens: int = 256

    def __post_init__(self) -> None:
        if self.kind not in BACKENDS:
            raise ValueError(f"unknown backend {self.kind!r}; expected one of {BACKENDS}")
        if not self.safety_clearance > 0:
            raise ValueError("safety_clearance must be positive")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if not self.lateral_step > 0 or self.max_lateral_offset < 0:
            raise ValueError("lateral search settings must be positive")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint URL")


# -- geometric oracle ------------------------------------------------------------


def path_normals(xy: np.ndarray) -> np.ndarray:
    """Unit lateral (rightward) normal at each waypoint, from central differences."""
    n = len(xy)
    normals = np.tile(np.array([0.0, 1.0]), (n, 1))
    if n < 2:
        return normals
    tangents = np.empty_like(xy)
    tangents[0] = xy[1] - xy[0]
    tangents[-1] = xy[-1] - xy[-2]
    if n > 2:
        tangents[1:-1] = xy[2:] - xy[:-2]
    last = np.array([0.0, 1.0])
    for j in range(n):
        tx, ty = tangents[j]
        norm = math.hypot(tx, ty)
        if norm > 0:
            last = np.array([-ty / norm, tx / norm])
        normals[j] = last
    return normals


def lateral_offsets(cfg: BackendConfig) -> List[float]:
    levels = int(math.floor(cfg.max_lateral_offset / cfg.lateral_step + 1e-9))
    return [round(k * cfg.lateral_step, 9) for k in range(1, levels + 1)]


def _stop_plan(xy: np.ndarray, hold: int) -> np.ndarray:
    out = xy.copy()
    out[hold + 1 :] = xy[hold]
    return out


def geometric_avoidance(
    ctx: Optional[ContextPackage],
    nominal: Trajectory,
    surroundings: Sequence[Trajectory],
    cfg: BackendConfig,
) -> ResidualSet:
    """Smallest lateral shift (or a stop) that keeps ``safety_clearance`` from every obstacle.

    Obstacles are the predicted ``surroundings`` plus the validated hazard from
    ``ctx`` treated as stationary.  The current waypoint (index 0) is never
    moved.  Offsets are tried by increasing magnitude; when both sides of one
    magnitude are clear, the side with the larger summed clearance wins, then
    the rightward side.  With no clear offset the plan holds at the last
    waypoint before the first conflict.
    """
    m = len(nominal)
    if m == 0:
        raise ValueError("nominal plan is empty")
    nom = nominal.xy
    times = nominal.times
    clearance = cfg.safety_clearance

    obstacles: List[Tuple[str, np.ndarray]] = []
    for tr in surroundings:
        if len(tr) != m or not np.allclose(tr.times, times, atol=1e-9, rtol=0):
            raise ValueError(f"surrounding trajectory {tr.agent_id!r} is not on the plan's time grid")
        obstacles.append((tr.agent_id or "agent", tr.xy))
    if ctx is not None and ctx.hazard is not None:
        obstacles.append(("hazard", np.tile(np.array(ctx.hazard.xy, dtype=float), (m, 1))))

    decision: Dict[str, Any] = {"triggered": False, "maneuver": "keep", "offset": 0.0, "required": clearance}
    if not obstacles:
        decision["clearance"] = None
        return ResidualSet.zeros(m, meta={"backend": "geometric", "decision": decision})

    obs = np.stack([o[1] for o in obstacles])
    d_nom = nearest_distances(nom, obs)
    decision["nominal_clearance"] = float(d_nom.min())
    if d_nom.min() >= clearance:
        decision["clearance"] = float(d_nom.min())
        return ResidualSet.zeros(m, meta={"backend": "geometric", "decision": decision})

    per_obstacle = np.linalg.norm(obs - nom[None], axis=2).min(axis=1)
    culprit = int(np.argmin(per_obstacle))
    decision.update(
        triggered=True,
        trigger=obstacles[culprit][0],
        trigger_position=[float(v) for v in obstacles[culprit][1][int(np.argmin(np.linalg.norm(obstacles[culprit][1] - nom, axis=1)))]],
    )

    normals = path_normals(nom)
    normals[0] = 0.0
    evaluated = 0
    for offset in lateral_offsets(cfg):
        clear_sides = []
        for sign in (1.0, -1.0):
            cand = nom + sign * offset * normals
            d = nearest_distances(cand, obs)
            evaluated += 1
            if d.min() >= clearance:
                clear_sides.append((float(d.sum()), sign, cand, float(d.min())))
        if clear_sides:
            # larger aggregate clearance first, then the positive (rightward) side
            clear_sides.sort(key=lambda c: (-c[0], -c[1]))
            _, sign, cand, achieved = clear_sides[0]
            decision.update(maneuver="offset", offset=sign * offset, clearance=achieved,
                            candidates_evaluated=evaluated)
            return _as_residuals(cand, nom, decision)

    first_conflict = int(np.argmax(d_nom < clearance))
    hold = max(first_conflict - 1, 0)
    cand = _stop_plan(nom, hold)
    d = nearest_distances(cand, obs)
    while hold > 0 and d.min() < clearance:
        hold -= 1
        cand = _stop_plan(nom, hold)
        d = nearest_distances(cand, obs)
    decision.update(maneuver="stop", stop_index=hold, clearance=float(d.min()),
                    candidates_evaluated=evaluated + 1)
    return _as_residuals(cand, nom, decision)


def _as_residuals(cand: np.ndarray, nom: np.ndarray, decision: Dict[str, Any]) -> ResidualSet:
    deltas = tuple((float(a), float(b)) for a, b in (cand - nom))
    return ResidualSet(deltas, meta={"backend": "geometric", "decision": decision})


# -- response parsing --------------------------------------------------------------


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_pair_array(obj: Any) -> bool:
    return isinstance(obj, list) and all(
        isinstance(p, list) and len(p) == 2 and all(_is_number(v) for v in p) for p in obj
    )


def _first_pair_array(body: str) -> Optional[list]:
    decoder = json.JSONDecoder()
    idx = body.find("[")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(body, idx)
        except ValueError:
            obj = None
        if _is_pair_array(obj):
            return obj
        idx = body.find("[", idx + 1)
    return None


def parse_residual_response(body: str, expected: int) -> ResidualSet:
    """Pull ``expected`` (dx, dy) pairs out of a model response.

    A JSON object with ``residuals`` (and optionally ``reasoning``) is read
    directly; otherwise the first JSON array of numeric pairs anywhere in the
    text is used.
    """
    reasoning = None
    pairs = None
    try:
        doc = json.loads(body)
    except ValueError:
        doc = None
    if isinstance(doc, dict) and "residuals" in doc:
        if isinstance(doc.get("reasoning"), str):
            reasoning = doc["reasoning"]
        if _is_pair_array(doc["residuals"]):
            pairs = doc["residuals"]
    elif _is_pair_array(doc):
        pairs = doc
    if pairs is None:
        pairs = _first_pair_array(body)
    if pairs is None:
        raise ResidualParseError("no array of numeric [dx, dy] pairs in response")
    if len(pairs) != expected:
        raise ResidualLengthMismatch(f"expected {expected} residual pairs, got {len(pairs)}")
    values = [(float(a), float(b)) for a, b in pairs]
    if not all(math.isfinite(a) and math.isfinite(b) for a, b in values):
        raise ResidualValueError("residuals contain non-finite values")
    return ResidualSet(tuple(values), reasoning=reasoning)


# -- remote backend ----------------------------------------------------------------


def build_request(tp: TextPrompt, vp: VisualPrompt, m: int, cfg: BackendConfig) -> Dict[str, Any]:
    return {
        "instruction": tp.instruction,
        "text_prompt": tp.context_block,
        "images": [pgm_base64(vp.bev_now), pgm_base64(vp.bev_past)],
        "num_waypoints": m,
        "max_new_tokens": cfg.max_new_tokens,
    }


def remote_plan(tp: TextPrompt, vp: VisualPrompt, m: int, cfg: BackendConfig,
                session: Optional[requests.Session] = None) -> ResidualSet:
    """POST one request to ``<endpoint>/plan`` and parse the residuals.

    Transport failures, timeouts, non-200 replies and malformed bodies all
    raise :class:`BackendError` carrying a zero-residual fallback.
    """
    url = cfg.endpoint.rstrip("/") + "/plan"
    payload = build_request(tp, vp, m, cfg)
    post = session.post if session is not None else requests.post

    def fail(reason: str, exc: Optional[BaseException] = None) -> BackendError:
        logger.warning("remote backend failed: %s", reason)
        fb = ResidualSet.zeros(m, fallback=True, error=reason, meta={"backend": "remote"})
        err = BackendError(reason, fb)
        err.__cause__ = exc
        return err

    try:
        resp = post(url, json=payload, timeout=cfg.timeout)
    except requests.Timeout as exc:
        raise fail(f"timeout after {cfg.timeout:g}s", exc)
    except requests.RequestException as exc:
        raise fail(f"transport error: {exc}", exc)
    if resp.status_code != 200:
        raise fail(f"HTTP {resp.status_code}")
    try:
        parsed = parse_residual_response(resp.text, m)
    except ResidualParseError as exc:
        raise fail(f"{type(exc).__name__}: {exc}", exc)
    return ResidualSet(parsed.deltas, reasoning=parsed.reasoning, meta={"backend": "remote"})


def plan(
    tp: TextPrompt,
    vp: VisualPrompt,
    nominal: Trajectory,
    cfg: BackendConfig,
    surroundings: Sequence[Trajectory] = (),
) -> ResidualSet:
    m = len(nominal)
    if m == 0:
        raise ValueError("nominal plan is empty")
    if cfg.kind == "null":
        return ResidualSet.zeros(m, meta={"backend": "null"})
    if cfg.kind == "geometric":
        return geometric_avoidance(tp.ctx, nominal, surroundings, cfg)
    return remote_plan(tp, vp, m, cfg)
