"""Tracker configuration: one flat dataclass, loadable from JSON, unknown keys rejected."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .optimizer import HopSchedule, RefineSettings, hop_schedule


@dataclass(frozen=True)
class Config:
    # contour / energy
    theta_sharp_deg: float = 45.0
    spacing: float = 8.0
    boundary_edges: bool = True
    interpolation: str = "cubic"
    icosphere_level: int = 4
    visibility_resolution: int = 512
    # refinement
    refine: bool = True
    sigma: float = 1.1
    final_hops: int = 5
    min_hops: int | None = None
    max_effectless: int | None = None
    max_hops: int | None = None
    temperature: float | None = None
    rot_step_deg: float = 10.0
    trans_step: float = 0.05
    local_max_iter: int = 100
    local_ftol: float = 1e-9
    # search bounds (translations as fractions of the model diameter)
    e_max: float = 2.5
    fallback_rot_deg: float = 30.0
    fallback_trans_xy: float = 0.1
    fallback_trans_z: float = 0.2
    safety_rot_deg: float = 60.0
    safety_trans: float = 0.5
    # keypoints
    klt_min_points: int = 8
    klt_min_inlier_rate: float = 0.3
    klt_levels: int = 3
    klt_window: int = 15
    klt_max_iter: int = 30
    klt_eps: float = 0.01
    klt_min_eig: float = 1e-7
    klt_max_residual: float = 0.1
    max_keypoints: int = 300
    corner_min_distance: float = 8.0
    corner_quality: float = 0.01
    corner_window: int = 5
    mask_erode: int = 3
    ransac_iterations: int = 200
    ransac_threshold: float = 4.0
    ransac_early_exit: float = 0.8
    # session
    lost_after: int = 5
    seed: int = 0

    def __post_init__(self):
        checks = [
            (0.0 < self.theta_sharp_deg < 180.0, "theta_sharp_deg must be in (0, 180)"),
            (self.spacing > 0, "spacing must be positive"),
            (self.interpolation in ("cubic", "linear"), "interpolation must be 'cubic' or 'linear'"),
            (self.sigma >= 0, "sigma must be non-negative"),
            (self.e_max > 0, "e_max must be positive"),
            (min(self.fallback_rot_deg, self.fallback_trans_xy, self.fallback_trans_z) > 0,
             "fallback half-widths must be positive"),
            (min(self.safety_rot_deg, self.safety_trans) > 0, "safety half-widths must be positive"),
            (self.final_hops >= 0, "final_hops must be >= 0"),
            (self.klt_levels >= 1 and self.klt_window >= 3, "bad KLT pyramid/window"),
            (self.ransac_iterations >= 1, "ransac_iterations must be >= 1"),
            (self.lost_after >= 1, "lost_after must be >= 1"),
            (0 <= self.icosphere_level <= 6, "icosphere_level must be in 0..6"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def theta_sharp(self) -> float:
        return math.radians(self.theta_sharp_deg)

    def energy_kwargs(self) -> dict:
        """Keyword arguments shared by every :class:`EnergyContext` the tracker builds."""
        return {"theta_sharp": self.theta_sharp, "spacing": self.spacing,
                "boundary_edges": self.boundary_edges, "interpolation": self.interpolation}

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **kw) -> "Config":
        return replace(self, **kw)

    def schedule(self, num_vertices: int, num_faces: int) -> HopSchedule:
        s = hop_schedule(num_vertices, num_faces, self.temperature)
        return HopSchedule(self.min_hops or s.min_hops, self.max_effectless or s.max_effectless,
                           self.max_hops or s.max_hops, self.temperature)

    def refine_settings(self, num_vertices: int, num_faces: int) -> RefineSettings:
        return RefineSettings(self.sigma, self.final_hops, self.rot_step_deg, self.trans_step,
                              self.temperature, self.local_max_iter, self.local_ftol,
                              self.schedule(num_vertices, num_faces))
