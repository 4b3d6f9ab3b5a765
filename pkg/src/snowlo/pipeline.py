"""Frame-to-frame odometry pipeline and ablation runner.

Every frame is prepared once (preprocessing, normals, pyramid, plane
targets) and reused as the target of the next pair. The source of each pair
gets per-point weights from the spatial score, the intensity mask and the
point predictor before coarse-to-fine registration.
"""

from __future__ import annotations

import copy
import csv
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .cloud import PointCloud, PreprocessConfig, Pyramid, build_pyramid, estimate_normals, preprocess
from .confidence import PREDICTORS, combine_weights, default_point_weights, propagate_weights
from .errors import InvalidArgument, MalformedFile, SnowLOError
from .pose import Pose
from .psm import score_cloud, segment_patches
from .registration import PlaneTarget, RegistrationConfig, register_coarse_to_fine
from .snowmask import DEFAULT_RATIO, snow_mask
from .trajectory import LENGTHS, DriftMetrics, Trajectory, accumulate, kitti_metrics

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    normal_radius: float = 4.0
    normal_max_nn: int = 50
    patch_size: int = 64
    eps_ang: float = 1e-8
    snow_ratio: float = DEFAULT_RATIO
    predictor: str = "default"
    use_psm: bool = True
    use_mask: bool = True
    motion_prior: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise InvalidArgument(f"unknown predictor {self.predictor!r}")

    def with_toggles(self, psm: bool, predictor: bool, mask: bool) -> "PipelineConfig":
        cfg = copy.deepcopy(self)
        cfg.use_psm = psm
        cfg.use_mask = mask
        cfg.predictor = "default" if predictor else "uniform"
        return cfg


class _Timer:
    def __init__(self):
        self.stages: dict = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + (time.perf_counter() - t0) * 1e3


@dataclass
class FrameState:
    cloud: PointCloud  # l0, with normals
    pyramid: Pyramid
    targets: Optional[list] = None
    weights: Optional[list] = None
    n_masked: int = 0


class OdometryPipeline:
    def __init__(self, cfg: Optional[PipelineConfig] = None):
        self.cfg = cfg or PipelineConfig()

    def prepare(self, raw: PointCloud, timer: Optional[_Timer] = None) -> FrameState:
        cfg = self.cfg
        timer = timer or _Timer()
        with timer.stage("preprocess"):
            cloud = preprocess(raw, cfg.preprocess, cfg.seed)
        with timer.stage("pyramid"):
            pyr = build_pyramid(cloud, cfg.seed)
        return FrameState(cloud, pyr)

    def targets(self, state: FrameState, timer: Optional[_Timer] = None) -> list:
        """Per-level plane targets of a frame, excluding its zero-weight points."""
        if state.targets is None:
            timer = timer or _Timer()
            weights = self.compute_weights(state, timer)
            with timer.stage("normals"):
                # only points that can serve as targets need a normal
                l0 = state.pyramid.levels[0]
                normals = estimate_normals(l0, self.cfg.normal_radius, self.cfg.normal_max_nn,
                                           subset=weights[0] > 0)
                state.pyramid = state.pyramid.with_normals(normals)
                state.cloud = state.pyramid.levels[0]
            with timer.stage("targets"):
                levels = state.pyramid.levels
                if self.cfg.registration.target_level == "finest":
                    state.targets = [PlaneTarget(levels[0], weights[0])] * len(levels)
                else:
                    state.targets = [PlaneTarget(lv, w) for lv, w in zip(levels, weights)]
        return state.targets

    def compute_weights(self, state: FrameState, timer: Optional[_Timer] = None) -> list:
        """Per-level weights of a prepared frame (cached on the state)."""
        if state.weights is not None:
            return state.weights
        cfg = self.cfg
        timer = timer or _Timer()
        l0 = state.pyramid.levels[0]
        n = len(l0)
        with timer.stage("patches"):
            need_patches = cfg.use_psm or cfg.predictor != "uniform"
            patches = segment_patches(state.pyramid, min(cfg.patch_size, n)) if need_patches else None
        with timer.stage("psm"):
            sp = (score_cloud(state.pyramid, eps_ang=cfg.eps_ang, patches=patches).sp
                  if cfg.use_psm else np.ones(n))
        with timer.stage("mask"):
            if cfg.use_mask:
                bits = snow_mask(l0.intensities, cfg.snow_ratio).bits
            else:
                bits = np.ones(n, dtype=np.uint8)
        with timer.stage("predictor"):
            if cfg.predictor == "uniform":
                wpp = np.ones(n)
            else:
                wpp = default_point_weights(patches, l0.positions, l0.intensities,
                                            PREDICTORS[cfg.predictor])
        with timer.stage("combine"):
            w = combine_weights(sp, bits, wpp)
            state.weights = propagate_weights(w, state.pyramid)
            state.n_masked = int(np.count_nonzero(bits == 0))
        return state.weights

    def register(self, src: FrameState, tgt: FrameState, init: Optional[Pose] = None,
                 timer: Optional[_Timer] = None):
        """Pose of the source frame in the target frame's coordinates."""
        timer = timer or _Timer()
        weights = self.compute_weights(src, timer)
        targets = self.targets(tgt, timer)
        with timer.stage("registration"):
            return register_coarse_to_fine(src.pyramid, tgt.pyramid, weights,
                                           self.cfg.registration, init, targets)

    def process_pair(self, raw_src: PointCloud, raw_tgt: PointCloud) -> tuple[Pose, dict]:
        """Run everything for one isolated pair, both frames from scratch."""
        timer = _Timer()
        t0 = time.perf_counter()
        tgt = self.prepare(raw_tgt, timer)
        src = self.prepare(raw_src, timer)
        result = self.register(src, tgt, None, timer)
        total = (time.perf_counter() - t0) * 1e3
        return result.pose, {"stages_ms": timer.stages, "total_ms": total,
                             "residuals": result.residuals, "pairs": result.pairs}


def _record(index: int, ok: bool, timer: _Timer, total: float, **extra) -> dict:
    rec = {"pair": index, "ok": ok, "stages_ms": {k: round(v, 3) for k, v in timer.stages.items()},
           "total_ms": round(total, 3)}
    rec.update(extra)
    return rec


def run_odometry(frames: Iterable, cfg: Optional[PipelineConfig] = None):
    """Estimate a trajectory over consecutive frames.

    ``frames`` yields :class:`PointCloud` objects (or zero-argument callables
    returning one, for lazy loading). A pair that fails keeps an identity
    relative pose and is flagged in its diagnostic record. Unreadable input
    (:class:`MalformedFile`) is not a pipeline failure and propagates.

    Returns ``(trajectory, diagnostics)`` with one record per pair.
    """
    pipe = OdometryPipeline(cfg)
    relatives, diagnostics = [], []
    prev_state: Optional[FrameState] = None
    prev_error: Optional[str] = None
    prior: Optional[Pose] = None
    n_frames = 0
    for k, frame in enumerate(frames):
        n_frames += 1
        timer = _Timer()
        t0 = time.perf_counter()
        state, error = None, None
        try:
            raw = frame() if callable(frame) else frame
            state = pipe.prepare(raw, timer)
        except MalformedFile:
            raise
        except SnowLOError as exc:
            error = f"frame {k}: {exc}"
        if k == 0:
            prev_state, prev_error = state, error
            pending = (timer, time.perf_counter() - t0)
            continue
        rel, extra = Pose.identity(), {}
        if state is None or prev_state is None:
            extra["error"] = error or prev_error
        else:
            try:
                result = pipe.register(state, prev_state,
                                       prior if pipe.cfg.motion_prior else None, timer)
                rel = result.pose
                prior = rel
                extra = {"residuals": {f"l{lv}": r for lv, r in result.residuals.items()},
                         "pairs": {f"l{lv}": c for lv, c in result.pairs.items()},
                         "n_points": len(state.cloud), "n_masked": state.n_masked}
            except SnowLOError as exc:
                extra["error"] = str(exc)
                extra["level"] = getattr(exc, "level", None)
        if k == 1:
            # fold the first frame's preparation into the first pair
            first_timer, first_total = pending
            for name, ms in first_timer.stages.items():
                timer.stages[name] = timer.stages.get(name, 0.0) + ms
            t0 -= first_total
        total = (time.perf_counter() - t0) * 1e3
        ok = "error" not in extra
        if not ok:
            log.warning("pair %d failed: %s", k, extra["error"])
        diagnostics.append(_record(k, ok, timer, total, **extra))
        relatives.append(rel)
        prev_state, prev_error = state, error
    if n_frames < 2:
        raise InvalidArgument("odometry needs at least two frames")
    return accumulate(relatives), diagnostics


ABLATIONS = (
    ("baseline", False, False, False),
    ("psm", True, False, False),
    ("predictor", False, True, False),
    ("psm+predictor", True, True, False),
    ("psm+predictor+mask", True, True, True),
)


@dataclass
class AblationRow:
    name: str
    metrics: DriftMetrics
    n_failed: int


def run_ablation(frames: Sequence, gt: Trajectory, cfg: Optional[PipelineConfig] = None,
                 variants: Sequence = ABLATIONS, lengths: Sequence[float] = LENGTHS
                 ) -> list[AblationRow]:
    """Drift metrics for each module toggle combination."""
    cfg = cfg or PipelineConfig()
    frames = list(frames)
    rows = []
    for name, psm, pred, mask in variants:
        traj, diag = run_odometry(frames, cfg.with_toggles(psm, pred, mask))
        rows.append(AblationRow(name, kitti_metrics(gt, traj, lengths),
                                sum(not d["ok"] for d in diag)))
    return rows


def write_ablation_csv(path, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "t_rel_pct", "r_rel_deg_per_100m", "failed_pairs"])
        for row in rows:
            w.writerow([row.name, f"{row.metrics.t_rel:.6f}", f"{row.metrics.r_rel:.6f}", row.n_failed])
