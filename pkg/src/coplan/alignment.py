"""Ego-frame alignment and prompt encoding under a token budget.

The context block uses a fixed line grammar::

    HAZARD x=<f> y=<f> t=<f>        (or ``HAZARD none``)
    NAV n=<int>
    WP <j> x=<f> y=<f>
    EGO n=<int>
    S t=<f> x=<f> y=<f> vx=<f> vy=<f> yaw=<f>

Coordinates are relative to the current ego position and times are relative
to ``t_now``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .bev import BevMap, ConfigurationError
from .structuring import ContextPackage

DEFAULT_PRECISION = 2
REDUCED_PRECISION = 1
HAZARD_PRECISION = 2
DEFAULT_PATCH = 8
TOKEN_BUDGET = 1600
MIN_NAV_KEPT = 2


class TokenBudgetError(RuntimeError):
    """The prompt is still over budget after every reduction stage."""

    def __init__(self, message: str, prompt: "TextPrompt"):
        super().__init__(message)
        self.prompt = prompt


def load_instruction(path: Union[str, Path, None] = None) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8").strip()
    return resources.files("coplan").joinpath("data/instruction.txt").read_text(encoding="utf-8").strip()


# -- alignment -----------------------------------------------------------------


def to_ego_frame(point: Tuple[float, float], ego_pos: Tuple[float, float]) -> Tuple[float, float]:
    return (point[0] - ego_pos[0], point[1] - ego_pos[1])


def from_ego_frame(point: Tuple[float, float], ego_pos: Tuple[float, float]) -> Tuple[float, float]:
    return (point[0] + ego_pos[0], point[1] + ego_pos[1])


def normalize_time(t: float, t0: float) -> float:
    return t - t0


# -- prompts -------------------------------------------------------------------


@dataclass(frozen=True)
class TextPrompt:
    instruction: str
    context_block: str
    estimated_tokens: int
    # encoding state, kept so reduce_tokens can re-render from the source package
    ctx: Optional[ContextPackage] = field(default=None, compare=False, repr=False)
    precision: int = field(default=DEFAULT_PRECISION, compare=False)
    history_stride: int = field(default=1, compare=False)
    nav_limit: Optional[int] = field(default=None, compare=False)

    @property
    def text(self) -> str:
        return f"{self.instruction}\n{self.context_block}"


@dataclass(frozen=True)
class VisualPrompt:
    bev_now: BevMap
    bev_past: BevMap
    patch_size: int = DEFAULT_PATCH

    def __post_init__(self) -> None:
        if self.bev_now.grid != self.bev_past.grid:
            raise ConfigurationError("current and past BEV maps must share a grid")
        if not self.bev_past.timestamp < self.bev_now.timestamp:
            raise ValueError("past BEV must be strictly older than the current one")


def _fmt(value: float, precision: int) -> str:
    # "+ 0.0" folds -0.0 into 0.0 so equal packages print identically
    return f"{round(value, precision) + 0.0:.{precision}f}"


def render_context(
    ctx: ContextPackage,
    precision: int = DEFAULT_PRECISION,
    history_stride: int = 1,
    nav_limit: Optional[int] = None,
) -> str:
    ego = ctx.ego_now
    origin = (ego.x, ego.y) if ego is not None else (0.0, 0.0)
    lines: List[str] = []

    if ctx.hazard is None:
        lines.append("HAZARD none")
    else:
        hx, hy = to_ego_frame(ctx.hazard.xy, origin)
        ht = normalize_time(ctx.hazard.t_h, ctx.t_now)
        p = HAZARD_PRECISION
        lines.append(f"HAZARD x={_fmt(hx, p)} y={_fmt(hy, p)} t={_fmt(ht, p)}")

    nav = ctx.nav_eff if nav_limit is None else ctx.nav_eff[:nav_limit]
    lines.append(f"NAV n={len(nav)}")
    for j, wp in enumerate(nav):
        wx, wy = to_ego_frame((wp[0], wp[1]), origin)
        lines.append(f"WP {j} x={_fmt(wx, precision)} y={_fmt(wy, precision)}")

    history = list(ctx.ego_history)
    if history_stride > 1:
        # keep the newest sample and every stride-th one before it
        history = history[::-1][::history_stride][::-1]
    lines.append(f"EGO n={len(history)}")
    for s in history:
        sx, sy = to_ego_frame(s.xy, origin)
        st = normalize_time(s.k * ctx.dt, ctx.t_now)
        lines.append(
            f"S t={_fmt(st, precision)} x={_fmt(sx, precision)} y={_fmt(sy, precision)} "
            f"vx={_fmt(s.vx, precision)} vy={_fmt(s.vy, precision)} yaw={_fmt(s.yaw, precision)}"
        )
    return "\n".join(lines)


def count_words(text: str) -> int:
    return len(text.split())


def encode_text_prompt(
    ctx: ContextPackage,
    instruction: str,
    precision: int = DEFAULT_PRECISION,
    history_stride: int = 1,
    nav_limit: Optional[int] = None,
) -> TextPrompt:
    block = render_context(ctx, precision, history_stride, nav_limit)
    return TextPrompt(
        instruction=instruction,
        context_block=block,
        estimated_tokens=count_words(f"{instruction}\n{block}"),
        ctx=ctx,
        precision=precision,
        history_stride=history_stride,
        nav_limit=nav_limit,
    )


def visual_tokens(vp: VisualPrompt) -> int:
    g = vp.bev_now.grid
    p = vp.patch_size
    if p < 1 or g.width % p or g.height % p:
        raise ConfigurationError(f"patch size {p} does not divide BEV grid {g.width}x{g.height}")
    return 2 * (g.height // p) * (g.width // p)


def estimate_tokens(tp: TextPrompt, vp: VisualPrompt) -> int:
    """Word-count proxy for text plus one token per patch for each of the two maps."""
    return count_words(tp.text) + visual_tokens(vp)


def reduce_tokens(tp: TextPrompt, budget: int, reserved: int = 0) -> TextPrompt:
    """Shrink a prompt until ``estimated_tokens + reserved <= budget``.

    Stages run in order and stop as soon as the prompt fits: coordinates are
    rounded to one decimal, then the ego history is thinned to every other
    sample, then navigation waypoints are dropped from the tail (never below
    two).  The HAZARD line is left untouched throughout.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")

    def fits(p: TextPrompt) -> bool:
        return p.estimated_tokens + reserved <= budget

    if fits(tp):
        return tp
    if tp.ctx is None:
        raise TokenBudgetError("prompt has no source context to reduce", tp)

    best = tp

    def consider(candidate: TextPrompt) -> TextPrompt:
        return candidate if candidate.estimated_tokens <= best.estimated_tokens else best

    best = consider(encode_text_prompt(tp.ctx, tp.instruction, min(tp.precision, REDUCED_PRECISION),
                                       tp.history_stride, tp.nav_limit))
    if fits(best):
        return best

    best = consider(encode_text_prompt(tp.ctx, tp.instruction, best.precision,
                                       best.history_stride * 2, best.nav_limit))
    if fits(best):
        return best

    n_nav = len(tp.ctx.nav_eff) if best.nav_limit is None else best.nav_limit
    while n_nav > MIN_NAV_KEPT:
        n_nav -= 1
        best = consider(encode_text_prompt(tp.ctx, tp.instruction, best.precision,
                                           best.history_stride, n_nav))
        if fits(best):
            return best

    raise TokenBudgetError(
        f"prompt needs {best.estimated_tokens + reserved} tokens, budget is {budget}", best
    )


# -- parsing (inverse of render_context) ----------------------------------------

_NUM = r"(-?\d+(?:\.\d+)?)"
_HAZARD_RE = re.compile(rf"^HAZARD x={_NUM} y={_NUM} t={_NUM}$")
_WP_RE = re.compile(rf"^WP (\d+) x={_NUM} y={_NUM}$")
_S_RE = re.compile(rf"^S t={_NUM} x={_NUM} y={_NUM} vx={_NUM} vy={_NUM} yaw={_NUM}$")


def parse_context_block(block: str) -> Dict[str, object]:
    """Read a context block back into numbers.

    Returns ``{"hazard": (x, y, t) | None, "nav": [(x, y), ...],
    "ego": [(t, x, y, vx, vy, yaw), ...]}``.
    """
    hazard = None
    nav: List[Tuple[float, float]] = []
    ego: List[Tuple[float, ...]] = []
    nav_n = ego_n = None
    for line in block.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "HAZARD none":
            continue
        m = _HAZARD_RE.match(line)
        if m:
            hazard = tuple(float(g) for g in m.groups())
            continue
        if line.startswith("NAV n="):
            nav_n = int(line[len("NAV n="):])
            continue
        if line.startswith("EGO n="):
            ego_n = int(line[len("EGO n="):])
            continue
        m = _WP_RE.match(line)
        if m:
            nav.append((float(m.group(2)), float(m.group(3))))
            continue
        m = _S_RE.match(line)
        if m:
            ego.append(tuple(float(g) for g in m.groups()))
            continue
        raise ValueError(f"unrecognised prompt line: {line!r}")
    if nav_n is not None and nav_n != len(nav):
        raise ValueError(f"NAV declares {nav_n} waypoints, found {len(nav)}")
    if ego_n is not None and ego_n != len(ego):
        raise ValueError(f"EGO declares {ego_n} samples, found {len(ego)}")
    return {"hazard": hazard, "nav": nav, "ego": ego}
