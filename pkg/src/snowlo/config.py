"""``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Pipeline keys::

    ground_z_cut = 0.5        # m above the fitted ground plane
    max_range = 30            # m
    voxel_cell = 0.2          # m
    target_points = 8192
    normal_radius = 4         # m
    normal_max_nn = 50
    patch_size = 64           # points per superpoint patch
    snow_ratio = 0.01         # mask threshold = max(I) * snow_ratio
    predictor = default       # default | uniform
    psm = on                  # on | off
    mask = on                 # on | off
    inner_iters = 5
    max_dist.l0 = 0.3         # correspondence gate per level (m)
    max_dist.l1 = 0.4
    max_dist.l2 = 0.6
    max_dist.l3 = 3.0
    min_pairs = 10
    target_level = same       # same | finest
    motion_prior = on         # start each pair from the previous relative pose
    seed = 0

Synthesis keys (``synth`` subcommand)::

    frames = 50
    step = 2.5                # m travelled per frame
    snow_fraction = 0.2       # share of snow points in each raw frame
    near_share = 0.8          # share of snow in the near-sensor cluster
    near_extent = 2           # m, radius of the near cluster
    far_range_min = 8
    far_range_max = 30
    snow_band_max = 2         # snow intensity upper bound
    scene_intensity_min = 5
    scene_intensity_max = 255
    noise_sigma = 0.01        # m
    rings = 64
    azimuth_steps = 1024
    seed = 0
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import MalformedFile
from .pipeline import PipelineConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedFile(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value.strip("\"'")
    return out


def _bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise MalformedFile(f"{key}: expected on/off, got {value!r}")


def _num(key: str, value: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise MalformedFile(f"{key}: expected a number, got {value!r}") from None


def pipeline_config(values: Optional[dict] = None) -> PipelineConfig:
    cfg = PipelineConfig()
    gates = list(cfg.registration.max_dist)
    for key, value in (values or {}).items():
        if key in ("ground_z_cut", "max_range", "voxel_cell"):
            setattr(cfg.preprocess, key, _num(key, value))
        elif key == "target_points":
            cfg.preprocess.target_points = _num(key, value, int)
        elif key in ("normal_radius", "snow_ratio", "eps_ang"):
            setattr(cfg, key, _num(key, value))
        elif key in ("normal_max_nn", "patch_size", "seed"):
            setattr(cfg, key, _num(key, value, int))
        elif key == "predictor":
            cfg.predictor = value
        elif key == "psm":
            cfg.use_psm = _bool(key, value)
        elif key == "mask":
            cfg.use_mask = _bool(key, value)
        elif key == "motion_prior":
            cfg.motion_prior = _bool(key, value)
        elif key in ("inner_iters", "min_pairs"):
            setattr(cfg.registration, key, _num(key, value, int))
        elif key == "target_level":
            cfg.registration.target_level = value
        elif key.startswith("max_dist.l") and key[-1] in "0123":
            gates[int(key[-1])] = _num(key, value)
        elif key in SYNTH_KEYS:
            continue
        else:
            raise MalformedFile(f"unknown config key {key!r}")
    cfg.registration.max_dist = tuple(gates)
    cfg.__post_init__()
    return cfg


@dataclass
class SynthConfig:
    frames: int = 50
    step: float = 2.5
    snow_fraction: float = 0.0
    near_share: float = 0.8
    near_extent: float = 2.0
    far_range_min: float = 8.0
    far_range_max: float = 30.0
    snow_band_max: float = 2.0
    scene_intensity_min: float = 5.0
    scene_intensity_max: float = 255.0
    noise_sigma: float = 0.01
    rings: int = 64
    azimuth_steps: int = 1024
    seed: int = 0


SYNTH_KEYS = set(SynthConfig.__dataclass_fields__)


def synth_config(values: Optional[dict] = None) -> SynthConfig:
    cfg = SynthConfig()
    for key, value in (values or {}).items():
        if key not in SYNTH_KEYS:
            continue
        kind = type(getattr(cfg, key))
        setattr(cfg, key, _num(key, value, kind))
    return cfg
