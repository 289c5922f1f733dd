"""Evaluation metrics: motion-map overlap, displacement errors, collisions, clearance.

VPQ here is the temporal mean of per-frame IoU between predicted and
ground-truth occupancy masks, not the instance-level panoptic variant.
"""

from __future__ import annotations

import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .scenario import TIME_ATOL, Trajectory

COLLISION_THRESHOLD = 5.0  # m


class MetricError(ValueError):
    """Inputs a metric cannot be evaluated on (shape / length / alignment)."""


class UndefinedBaselineError(MetricError):
    """Collision-rate reduction requested against a zero baseline."""


@dataclass(frozen=True)
class CollisionRecord:
    flags: Tuple[int, ...]
    min_distances: Tuple[float, ...]
    threshold: float = COLLISION_THRESHOLD

    @property
    def any(self) -> bool:
        return any(self.flags)


# -- occupancy overlap ---------------------------------------------------------


def _as_masks(seq) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.ndim == 2:
        arr = arr[None]
    return arr.astype(bool)


def iou(pred, gt) -> float:
    """Intersection over union of two boolean regions; two empty regions score 1."""
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise MetricError(f"region shapes differ: {p.shape} vs {g.shape}")
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


def vpq(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> float:
    p = _as_masks(pred)
    g = _as_masks(gt)
    if p.shape != g.shape:
        raise MetricError(f"mask sequences differ in shape: {p.shape} vs {g.shape}")
    if p.shape[0] == 0:
        raise MetricError("empty mask sequence")
    inter = np.count_nonzero(p & g, axis=(1, 2))
    union = np.count_nonzero(p | g, axis=(1, 2))
    per_frame = [1.0 if u == 0 else int(i) / int(u) for i, u in zip(inter, union)]
    return sum(per_frame) / len(per_frame)


def miou(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    if len(pairs) == 0:
        raise MetricError("mIoU needs at least one scenario")
    return sum(iou(p, g) for p, g in pairs) / len(pairs)


# -- trajectory alignment --------------------------------------------------------


def _check_aligned(reference: Trajectory, others: Iterable[Trajectory]) -> None:
    ref_t = reference.times
    for tr in others:
        if len(tr) != len(reference):
            raise MetricError(
                f"trajectory length mismatch: {len(tr)} vs {len(reference)} ({tr.agent_id!r})"
            )
        if not np.all(np.abs(tr.times - ref_t) <= TIME_ATOL):
            raise MetricError(f"trajectory {tr.agent_id!r} is not on the reference time grid")


def _displacements(candidates: Sequence[Trajectory], gt: Trajectory) -> np.ndarray:
    if len(candidates) == 0:
        raise MetricError("need at least one candidate trajectory")
    if len(gt) == 0:
        raise MetricError("ground-truth trajectory is empty")
    _check_aligned(gt, candidates)
    cand = np.stack([c.xy for c in candidates])  # (N, T, 2)
    return np.linalg.norm(cand - gt.xy[None], axis=2)  # (N, T)


def ade(candidate: Trajectory, gt: Trajectory) -> float:
    return float(_displacements([candidate], gt)[0].mean())


def min_ade(candidates: Sequence[Trajectory], gt: Trajectory) -> float:
    return float(_displacements(candidates, gt).mean(axis=1).min())


def min_fde(candidates: Sequence[Trajectory], gt: Trajectory) -> float:
    return float(_displacements(candidates, gt)[:, -1].min())


# -- separation based metrics ---------------------------------------------------


def nearest_distances(ego_xy: np.ndarray, others_xy: np.ndarray) -> np.ndarray:
    """(T,) nearest distance from ego positions (T, 2) to agents (N, T, 2)."""
    return np.linalg.norm(others_xy - ego_xy[None], axis=2).min(axis=0)


def min_separation(ego: Trajectory, surroundings: Sequence[Trajectory]) -> np.ndarray:
    """Per-timestep distance from the ego to its nearest surrounding agent."""
    if len(surroundings) == 0:
        raise MetricError("no surrounding agents")
    _check_aligned(ego, surroundings)
    return nearest_distances(ego.xy, np.stack([s.xy for s in surroundings]))


def collision_rate(
    ego: Trajectory, surroundings: Sequence[Trajectory], threshold: float = COLLISION_THRESHOLD
) -> Tuple[float, CollisionRecord]:
    """Fraction of frames whose nearest-agent distance is strictly below ``threshold``."""
    if len(surroundings) == 0:
        return 0.0, CollisionRecord((), (), threshold)
    d_min = min_separation(ego, surroundings)
    flags = tuple(int(d < threshold) for d in d_min)
    rate = sum(flags) / len(flags) if flags else 0.0
    return rate, CollisionRecord(flags, tuple(float(d) for d in d_min), threshold)


def mcd(ego: Trajectory, surroundings: Sequence[Trajectory]) -> float:
    """Minimum clearance distance over the horizon."""
    return float(min_separation(ego, surroundings).min())


def crr(c_baseline: float, c_refined: float) -> float:
    if c_baseline == 0:
        raise UndefinedBaselineError("collision-rate reduction is undefined for a zero baseline")
    return (c_baseline - c_refined) / c_baseline


# -- latency ---------------------------------------------------------------------


def measure_latency(stage_fn: Callable, inputs: Sequence = (), reps: int = 30, warmup: int = 3) -> float:
    """Median wall-clock time of ``stage_fn(*inputs)`` in milliseconds."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for _ in range(warmup):
        stage_fn(*inputs)
    samples: List[float] = []
    for _ in range(reps):
        t0 = time.perf_counter()
        stage_fn(*inputs)
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


class StageTimer:
    """Accumulates per-stage wall-clock durations in milliseconds."""

    def __init__(self) -> None:
        self.stages: Dict[str, float] = {}

    @contextmanager
    def time(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + (time.perf_counter() - t0) * 1e3

    @property
    def total(self) -> float:
        return sum(self.stages.values())
