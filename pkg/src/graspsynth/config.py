"""Run configuration: defaults, TOML loading and range checks.

Every field can be set from a TOML file. Top-level keys cover the dataset
run; nested tables ``[camera]``, ``[gripper]``, ``[quality]``,
``[matching]``, ``[losses]``, ``[collision]`` and an array of tables
``[[augmentation]]`` cover the rest::

    seed = 7
    views_per_object = 20

    [camera]
    width = 224
    fx = 200.0

    [[augmentation]]
    kind = "rotate"
    exec_probability = 0.5
    params = { angles = [90, 180, 270] }
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import tomli

from .augment import DEFAULT_FAMILY, AugmentOp
from .camera import CameraIntrinsics
from .errors import ConfigError
from .sampling import GripperModel


@dataclass(frozen=True)
class CameraConfig:
    width: int = 224
    height: int = 224
    fx: float = 200.0
    fy: float = 200.0
    cx: float = 112.0
    cy: float = 112.0

    def intrinsics(self):
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class QualityConfig:
    sigma_c: float = 0.0025
    trials: int = 100


@dataclass(frozen=True)
class MatchingConfig:
    pos_thresh: float = 0.7
    neg_thresh: float = 0.3
    k: int = 3
    stride: float = 16.0
    scales: tuple = (16.0, 32.0, 64.0)
    ratios: tuple = (0.5, 2.0)
    angles: tuple = (-75.0, -45.0, -15.0, 15.0, 45.0, 75.0)


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    # 0.999 moves the key net too little over the toy run's 200 steps
    momentum: float = 0.99
    lr: float = 0.05
    proj_dim: int = 16
    feature_dim: int = 32
    queue_size: int = 0
    lambda_x: float = 5.0
    lambda_y: float = 5.0
    lambda_theta: float = 5.0
    lambda_w: float = 1.0
    lambda_h: float = 1.0
    lambda_gamma: float = 1.0
    lambda_z: float = 1.0


@dataclass(frozen=True)
class CollisionConfig:
    trunc: float = 0.1
    grid_step: float = 5.0
    spacing: float = 0.005


_SECTIONS = {
    "camera": CameraConfig,
    "gripper": GripperModel,
    "quality": QualityConfig,
    "matching": MatchingConfig,
    "losses": LossConfig,
    "collision": CollisionConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    grasp_samples: int = 100
    views_per_object: int = 20
    top_fraction: float = 0.2
    tilt_limit: float = 30.0
    gamma_pixel_w: bool = False
    depth_format: str = "png"
    mesh_scale: float = 1.0
    camera: CameraConfig = field(default_factory=CameraConfig)
    gripper: GripperModel = field(default_factory=GripperModel)
    quality: QualityConfig = field(default_factory=QualityConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    collision: CollisionConfig = field(default_factory=CollisionConfig)
    augmentation: tuple = DEFAULT_FAMILY

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")
        need(self.grasp_samples >= 1, "grasp_samples must be >= 1")
        need(1 <= self.views_per_object <= 20, "views_per_object must be in [1, 20]")
        need(0 < self.top_fraction <= 1, "top_fraction must be in (0, 1]")
        need(0 <= self.tilt_limit <= 90, "tilt_limit must be in [0, 90]")
        need(self.depth_format in ("png", "raw"), "depth_format must be 'png' or 'raw'")
        need(self.mesh_scale > 0, "mesh_scale must be positive")
        try:
            self.camera.intrinsics()
        except ValueError as exc:
            raise ConfigError(f"camera: {exc}") from None
        q = self.quality
        need(q.sigma_c >= 0 and q.trials >= 1, "quality needs sigma_c >= 0 and trials >= 1")
        m = self.matching
        need(0 <= m.neg_thresh < m.pos_thresh <= 1, "matching needs 0 <= neg_thresh < pos_thresh <= 1")
        need(m.k >= 1 and m.stride > 0, "matching needs k >= 1 and stride > 0")
        need(min(m.scales, default=0) > 0 and min(m.ratios, default=0) > 0, "scales and ratios must be positive")
        need(len(m.angles) > 0, "matching angles must be non-empty")
        lo = self.losses
        need(lo.tau > 0, "tau must be positive")
        need(0 <= lo.momentum <= 1, "momentum must be in [0, 1]")
        need(lo.lr > 0 and lo.proj_dim >= 1 and lo.feature_dim >= 1 and lo.queue_size >= 0,
             "losses: lr, dims and queue_size out of range")
        need(min(lo.lambda_x, lo.lambda_y, lo.lambda_theta, lo.lambda_w, lo.lambda_h,
                 lo.lambda_gamma, lo.lambda_z) >= 0, "loss weights must be non-negative")
        c = self.collision
        need(c.trunc > 0 and c.spacing > 0, "collision trunc and spacing must be positive")
        n = 360.0 / c.grid_step if c.grid_step > 0 else math.nan
        need(abs(n - round(n)) < 1e-9, "collision grid_step must divide 360")
        need(len(self.augmentation) > 0, "augmentation family must be non-empty")

    @property
    def intrinsics(self):
        return self.camera.intrinsics()

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "augmentation":
                out[f.name] = [op.to_dict() for op in v]
            elif f.name in _SECTIONS:
                out[f.name] = {k: list(x) if isinstance(x, tuple) else x for k, x in asdict(v).items()}
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d):
        return cls().updated(d)

    def updated(self, d):
        """Copy with the keys of ``d`` (same layout as :meth:`to_dict`) applied."""
        known = {f.name for f in fields(self)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            for key, val in d.items():
                if key == "augmentation":
                    kw[key] = tuple(AugmentOp.from_dict(op) for op in val)
                elif key in _SECTIONS:
                    if not isinstance(val, dict):
                        raise ConfigError(f"[{key}] must be a table")
                    kw[key] = _section(getattr(self, key), key, val)
                else:
                    default = getattr(self, key)
                    kw[key] = _coerce(default, val, key)
            return replace(self, **kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None


def _coerce(default, val, key):
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be a boolean")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key} must be an integer")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(val)
    if isinstance(default, tuple):
        return tuple(float(x) for x in val)
    if isinstance(default, str) and not isinstance(val, str):
        raise ConfigError(f"{key} must be a string")
    return val


def _section(current, name, table):
    known = {f.name for f in fields(current)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    kw = {k: _coerce(getattr(current, k), v, f"{name}.{k}") for k, v in table.items()}
    return replace(current, **kw)


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the TOML file at ``path``, then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cfg.updated(data)
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg
