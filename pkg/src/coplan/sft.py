"""Supervised fine-tuning records: prompts, a reasoning trace and residual targets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .alignment import TextPrompt, VisualPrompt, to_ego_frame
from .bev import pgm_base64
from .rtf import OptimizedPlan
from .structuring import ContextPackage

Point2 = Tuple[float, float]

DEFAULT_REASONING_TEMPLATE = (
    "Step 1, check for conflicts: {trigger}\n"
    "Step 2, choose a manoeuvre: {decision}\n"
    "Step 3, verify: {clearance}"
)

_KEY_ORDER = ("instruction", "text_prompt", "images", "reasoning", "targets")
_NUDGE_ULPS = 8


class TargetLengthError(ValueError):
    pass


def _exact_delta(g: float, s: float) -> float:
    """A float d with g + d == s when one exists within a few ulps of s - g."""
    d = s - g
    if g + d == s:
        return d
    up = down = d
    for _ in range(_NUDGE_ULPS):
        up = math.nextafter(up, math.inf)
        if g + up == s:
            return up
        down = math.nextafter(down, -math.inf)
        if g + down == s:
            return down
    return d


def gt_residuals(nominal: Sequence[Sequence[float]], safe: Sequence[Sequence[float]]) -> List[Point2]:
    """Per-waypoint ``safe - nominal``, chosen so that adding it back restores ``safe``.

    Plain subtraction can be off by an ulp after re-addition; the delta is
    nudged to the neighbouring float that makes the round trip exact.
    """
    if len(nominal) != len(safe):
        raise TargetLengthError(f"nominal has {len(nominal)} waypoints, safe plan has {len(safe)}")
    return [
        (_exact_delta(float(g[0]), float(s[0])), _exact_delta(float(g[1]), float(s[1])))
        for g, s in zip(nominal, safe)
    ]


@dataclass(frozen=True)
class SftRecord:
    instruction: str
    text_prompt: str
    images: Tuple[str, str]
    reasoning: str
    targets: Tuple[Point2, ...]

    def __post_init__(self) -> None:
        if len(self.images) != 2 or not all(self.images):
            raise ValueError("a record needs exactly two images")

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "text_prompt": self.text_prompt,
            "images": list(self.images),
            "reasoning": self.reasoning,
            "targets": [list(t) for t in self.targets],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SftRecord":
        return cls(
            instruction=doc["instruction"],
            text_prompt=doc["text_prompt"],
            images=tuple(doc["images"]),
            reasoning=doc["reasoning"],
            targets=tuple((float(a), float(b)) for a, b in doc["targets"]),
        )


def _side(offset: float) -> str:
    return "right" if offset > 0 else "left"


def describe_decision(decision: dict, ctx: Optional[ContextPackage], template: str) -> str:
    """Render the oracle's decision log as a short step-by-step trace."""
    required = decision.get("required", 5.0)
    origin = (ctx.ego_now.x, ctx.ego_now.y) if ctx is not None and ctx.ego_now is not None else (0.0, 0.0)

    if not decision.get("triggered"):
        trigger = f"no hazard or vehicle comes within {required:.1f} m of the planned waypoints."
        if ctx is not None and ctx.hazard is not None:
            hx, hy = to_ego_frame(ctx.hazard.xy, origin)
            trigger = f"the validated hazard at x={hx:.1f} y={hy:.1f} stays clear; " + trigger
        action = "keep the nominal waypoints unchanged."
    else:
        px, py = to_ego_frame(tuple(decision.get("trigger_position", origin)), origin)
        source = decision.get("trigger", "an obstacle")
        source = "the validated hazard" if source == "hazard" else f"vehicle {source}"
        trigger = (
            f"{source} at x={px:.1f} y={py:.1f} brings the nominal plan to "
            f"{decision.get('nominal_clearance', 0.0):.2f} m, below the {required:.1f} m clearance."
        )
        if decision.get("maneuver") == "offset":
            off = decision["offset"]
            action = f"shift the remaining waypoints {abs(off):.1f} m to the {_side(off)}."
        else:
            action = (
                "no lateral offset within one lane is clear, so stop and hold at waypoint "
                f"{decision.get('stop_index', 0)}."
            )
    achieved = decision.get("clearance")
    if achieved is None:
        verify = "nothing nearby, the plan is clear."
    else:
        verify = f"minimum clearance along the new plan is {achieved:.2f} m."
    return template.format(trigger=trigger, decision=action, clearance=verify)


def build_sft_record(
    ctx: ContextPackage,
    prompts: Tuple[TextPrompt, VisualPrompt],
    safe_plan: OptimizedPlan,
    reasoning_template: str = DEFAULT_REASONING_TEMPLATE,
) -> SftRecord:
    tp, vp = prompts
    targets = gt_residuals(safe_plan.source_nominal, safe_plan.waypoints)
    if len(targets) != len(ctx.nav_eff):
        raise TargetLengthError(
            f"{len(targets)} targets for {len(ctx.nav_eff)} effective navigation waypoints"
        )
    decision = safe_plan.residuals_applied.meta.get("decision", {})
    return SftRecord(
        instruction=tp.instruction,
        text_prompt=tp.context_block,
        images=(pgm_base64(vp.bev_now), pgm_base64(vp.bev_past)),
        reasoning=describe_decision(decision, ctx, reasoning_template),
        targets=tuple(targets),
    )


def export_jsonl(records: Iterable[SftRecord], path: Union[str, Path]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            doc = rec.to_dict()
            fh.write(json.dumps({k: doc[k] for k in _KEY_ORDER}, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def load_jsonl(path: Union[str, Path]) -> List[SftRecord]:
    with open(path, encoding="utf-8") as fh:
        return [SftRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
