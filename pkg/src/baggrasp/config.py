"""Tunable-parameter handling: one dataclass holding every knob in the stack,
a plain-text key=value config file parser, and flag-override merging.

Unknown keys are rejected at parse time; color thresholds are comma-separated
RGB triples.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass
class PipelineConfig:
    # Classical vision.
    sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.2
    perimeter_min: float = 60.0
    color_low: tuple = (150, 40, 0)
    color_high: tuple = (215, 105, 60)
    # Pixel -> workspace calibration (meters = scale * pixel + shift, per axis).
    scale_x: float = 0.3 / 256.0
    scale_y: float = 0.3 / 144.0
    shift_x: float = 0.45
    shift_y: float = -0.15
    table_z: float = 0.0
    grasp_z: float = 0.01
    # Proposal denoiser.
    window: float = 10.0
    distance_threshold: float = 0.02
    # Trajectory and control.
    duration: float = 5.0
    k_p: float = 0.8
    k_d: float = 0.4
    damping: float = 1e-3
    qdot_max: float = 1.5
    control_rate: float = 100.0
    settle_time: float = 2.0
    # Simulator.
    scene_width: int = 256
    scene_height: int = 144
    frame_rate: float = 1.0
    noise_sigma: float = 0.0
    pos_tol: float = 0.005
    ang_tol_deg: float = 2.0
    good_grasp_px: float = 10.0
    arm_file: str = ""
    params_path: str = ""
    # Learned vision training.
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 4

    @property
    def ang_tol(self) -> float:
        return math.radians(self.ang_tol_deg)

    def validate(self) -> "PipelineConfig":
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not (0.0 < self.canny_low < self.canny_high <= 1.0):
            raise ValueError("require 0 < canny_low < canny_high <= 1")
        if self.perimeter_min <= 0:
            raise ValueError("perimeter_min must be > 0")
        if self.scale_x == 0 or self.scale_y == 0:
            raise ValueError("calibration scale components must be nonzero")
        for name in ("color_low", "color_high"):
            trip = getattr(self, name)
            if len(trip) != 3 or any(not (0 <= int(v) <= 255) for v in trip):
                raise ValueError(f"{name} must be an RGB triple in 0..255")
        if any(lo > hi for lo, hi in zip(self.color_low, self.color_high)):
            raise ValueError("color_low must be componentwise <= color_high")
        if self.window <= 0 or self.distance_threshold < 0:
            raise ValueError("bad denoiser parameters")
        if self.duration <= 0 or self.control_rate <= 0:
            raise ValueError("duration and control_rate must be > 0")
        if self.k_p <= 0 or self.k_d < 0:
            raise ValueError("require k_p > 0 and k_d >= 0")
        if self.scene_width < 8 or self.scene_height < 8:
            raise ValueError("scene dimensions too small")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, raw: str):
    field = _FIELDS[name]
    raw = raw.strip()
    if field.type in ("tuple", tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        if len(parts) != 3:
            raise ValueError(f"{name}: expected an r,g,b triple, got {raw!r}")
        return tuple(int(p) for p in parts)
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def load_config(path) -> PipelineConfig:
    """Read key=value lines ('#' starts a comment) into a PipelineConfig."""
    cfg = PipelineConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg.validate()


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply key -> string overrides (e.g. from CLI flags) on top of cfg."""
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, str(raw)))
    return cfg.validate()
