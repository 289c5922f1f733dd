"""Flat key/value run configuration (a TOML file without tables)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .alignment import DEFAULT_PATCH, TOKEN_BUDGET
from .bev import GridSpec, OverlaySpec
from .planner import BackendConfig
from .structuring import ValidationConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class StageConfig:
    """Settings for every non-model pipeline stage."""

    validation: ValidationConfig = field(default_factory=lambda: ValidationConfig(nav_horizon=4))
    raster_grid: GridSpec = field(default_factory=lambda: GridSpec.centered(128, 40.0))
    pool_factor: int = 2
    overlay: OverlaySpec = field(default_factory=OverlaySpec)
    patch_size: int = DEFAULT_PATCH
    token_budget: int = TOKEN_BUDGET
    waypoint_dt: float = 0.5  # s between plan waypoints
    past_offset_s: float = 0.5  # s between the two BEV frames
    instruction: Optional[str] = None  # None = bundled default text
    clamp_max_step: Optional[float] = None  # m; None disables the feasibility clamp


_VALIDATION_KEYS = {"delta_t_max": "delta_t_max", "history_window_s": "history_window_s", "nav_horizon": "nav_horizon"}
_BACKEND_KEYS = {f.name for f in fields(BackendConfig)}
_BACKEND_ALIASES = {"backend": "kind"}


def config_from_mapping(values: Dict[str, Any]) -> Tuple[StageConfig, BackendConfig]:
    """Build configs from flat keys; unknown keys raise ``KeyError``."""
    stage = StageConfig()
    validation: Dict[str, Any] = {}
    backend: Dict[str, Any] = {}
    grid: Dict[str, Any] = {}
    overlay: Dict[str, Any] = {}
    stage_kw: Dict[str, Any] = {}
    for key, value in values.items():
        if key in _VALIDATION_KEYS:
            validation[_VALIDATION_KEYS[key]] = value
        elif key in _BACKEND_ALIASES:
            backend[_BACKEND_ALIASES[key]] = value
        elif key in _BACKEND_KEYS:
            backend[key] = value
        elif key in ("grid_size", "grid_half_extent_m"):
            grid[key] = value
        elif key == "tick_spacing":
            overlay["tick_spacing"] = float(value)
        elif key == "instruction_file":
            stage_kw["instruction"] = Path(value).read_text(encoding="utf-8").strip()
        elif key in ("pool_factor", "patch_size", "token_budget", "waypoint_dt", "past_offset_s",
                     "clamp_max_step", "instruction"):
            stage_kw[key] = value
        else:
            raise KeyError(f"unknown config key {key!r}")
    if validation:
        stage_kw["validation"] = replace(stage.validation, **validation)
    if grid:
        size = int(grid.get("grid_size", stage.raster_grid.width))
        half = float(grid.get("grid_half_extent_m", 0.5 * stage.raster_grid.width * stage.raster_grid.scale))
        stage_kw["raster_grid"] = GridSpec.centered(size, half)
    if overlay:
        stage_kw["overlay"] = replace(stage.overlay, **overlay)
    return replace(stage, **stage_kw), BackendConfig(**backend)


def load_config(path: Union[str, Path, None]) -> Tuple[StageConfig, BackendConfig]:
    if path is None:
        return StageConfig(), BackendConfig()
    with open(path, "rb") as fh:
        values = tomllib.load(fh)
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat key = value pairs; found tables {nested}")
    return config_from_mapping(values)
