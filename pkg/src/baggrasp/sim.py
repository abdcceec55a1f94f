"""Deterministic kinematic simulator: synthetic ball-in-bag scenes, a
perfect-velocity-tracking plant, and the end-to-end episode runner
(vision stream -> denoise -> plan -> control) with report/trace artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical, denoise, image_io, kinematics, learned, so3, trajectory
from .classical import CameraCalibration, GraspProposal, VisionError, wrap_half_pi
from .config import PipelineConfig
from .image_io import DepthImage, RgbImage

BACKGROUND = (100, 100, 100)
BALL_COLOR = (183, 72, 27)    # same luminance as the background: the ball is
                              # invisible to the edge detector, only to color
CREASE_COLOR = (255, 255, 255)
BASE_DEPTH_MM = 800.0
BALL_BUMP_MM = 40.0

HOME_Q = np.array([0.0, 0.45, 0.0, -1.05, 0.0, 0.6, 0.0])


@dataclass
class CreaseSegment:
    p0: np.ndarray      # (x, y) px
    p1: np.ndarray
    width: float        # px
    elevation: float    # mm

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float).reshape(2)
        self.p1 = np.asarray(self.p1, dtype=float).reshape(2)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def angle(self) -> float:
        d = self.p1 - self.p0
        return wrap_half_pi(math.atan2(d[1], d[0]))


@dataclass
class Scene:
    rgb: RgbImage
    depth: DepthImage
    ball_center: np.ndarray
    ball_radius: float
    creases: list = field(default_factory=list)
    label: tuple | None = None  # ((x, y) px, theta)


@dataclass
class EpisodeReport:
    proposal: GraspProposal | None
    success: bool
    reason: str
    final_pos_err: float | None
    final_yaw_err: float | None
    proposal_px_err: float | None
    series: list = field(default_factory=list)  # (t, ||e_p||, ||e_o||)
    stats: dict = field(default_factory=dict)


def _capsule_dist(xg: np.ndarray, yg: np.ndarray, seg: CreaseSegment) -> np.ndarray:
    d = seg.p1 - seg.p0
    len2 = float(d @ d)
    px = xg - seg.p0[0]
    py = yg - seg.p0[1]
    t = np.clip((px * d[0] + py * d[1]) / len2, 0.0, 1.0)
    return np.hypot(px - t * d[0], py - t * d[1])


def _segments_close(a: CreaseSegment, b: CreaseSegment, min_gap: float) -> bool:
    ta = np.linspace(0.0, 1.0, max(2, int(a.length)))
    tb = np.linspace(0.0, 1.0, max(2, int(b.length)))
    pa = a.p0 + ta[:, None] * (a.p1 - a.p0)
    pb = b.p0 + tb[:, None] * (b.p1 - b.p0)
    dists = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return bool(dists.min() < min_gap + 0.5 * (a.width + b.width))


def _sample_crease(rng, center, dist: float, length: float, width: int,
                   elevation: float) -> CreaseSegment:
    alpha = rng.uniform(0.0, 2.0 * math.pi)
    beta = alpha + math.pi / 2 + rng.uniform(-0.25, 0.25)
    mid = center + dist * np.array([math.cos(alpha), math.sin(alpha)])
    half = 0.5 * length * np.array([math.cos(beta), math.sin(beta)])
    return CreaseSegment(mid - half, mid + half, width, elevation)


def _in_bounds(seg: CreaseSegment, w: int, h: int, margin: float) -> bool:
    for p in (seg.p0, seg.p1):
        if not (margin <= p[0] < w - margin and margin <= p[1] < h - margin):
            return False
    return True


def generate_scene(seed: int, cfg: PipelineConfig, flat: bool = False) -> Scene:
    """Render one synthetic scene, deterministically from the seed.

    The ball sits near the frame center; crease segments are bright raised
    strokes placed around it without touching it or each other. The labeled
    best grasp is the crease whose midpoint distance to the ball center is
    nearest 1.1 radii (the first crease is always generated in that band).
    A flat scene has no creases and no label.
    """
    rng = np.random.default_rng(seed)
    w, h = cfg.scene_width, cfg.scene_height
    center = np.array([rng.uniform(0.42, 0.58) * w, rng.uniform(0.42, 0.58) * h])
    radius = rng.uniform(16.0, 22.0)

    crop = image_io.crop_window(RgbImage(np.zeros((h, w, 3), dtype=np.uint8)))
    creases: list[CreaseSegment] = []
    if not flat:
        n_creases = int(rng.integers(2, 5))
        for idx in range(n_creases):
            band = (1.5, 1.9) if idx == 0 else (2.6, 3.4)
            for _ in range(200):
                dist = rng.uniform(*band) * radius
                seg = _sample_crease(rng, center, dist,
                                     length=rng.uniform(45.0, 75.0),
                                     width=int(rng.integers(2, 5)),
                                     elevation=rng.uniform(10.0, 20.0))
                if not _in_bounds(seg, w, h, margin=8.0):
                    continue
                if any(_segments_close(seg, other, 6.0) for other in creases):
                    continue
                if idx == 0:
                    ox, oy, cw, ch = crop
                    mx, my = seg.midpoint
                    if not (ox + 4 <= mx < ox + cw - 4 and oy + 4 <= my < oy + ch - 4):
                        continue
                creases.append(seg)
                break

    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND
    depth = np.full((h, w), BASE_DEPTH_MM)
    for seg in creases:
        dist = _capsule_dist(xs, ys, seg)
        rgb[dist <= seg.width / 2.0] = CREASE_COLOR
        depth -= seg.elevation * np.exp(-(dist * dist) / (2.0 * seg.width ** 2))
    ball_dist2 = (xs - center[0]) ** 2 + (ys - center[1]) ** 2
    rgb[ball_dist2 <= radius * radius] = BALL_COLOR
    depth -= BALL_BUMP_MM * np.exp(-ball_dist2 / (2.0 * (0.8 * radius) ** 2))

    label = None
    if creases:
        best = min(
            creases,
            key=lambda s: (abs(np.linalg.norm(s.midpoint - center) - 1.1 * radius),
                           -s.length))
        label = (best.midpoint.copy(), best.angle)
    return Scene(RgbImage(rgb), DepthImage(np.clip(np.round(depth), 0, 65535)
                                           .astype(np.uint16)),
                 center, radius, creases, label)


def add_pixel_noise(rng, rgb: RgbImage, depth: DepthImage,
                    sigma: float) -> tuple[RgbImage, DepthImage]:
    """Per-frame Gaussian pixel noise (intensity levels / millimeters)."""
    if sigma <= 0:
        return rgb, depth
    noisy_rgb = np.clip(np.round(rgb.pixels.astype(float)
                                 + rng.normal(0.0, sigma, rgb.pixels.shape)),
                        0, 255).astype(np.uint8)
    noisy_dep = np.clip(np.round(depth.pixels.astype(float)
                                 + rng.normal(0.0, sigma, depth.pixels.shape)),
                        0, 65535).astype(np.uint16)
    return RgbImage(noisy_rgb), DepthImage(noisy_dep)


def step_plant(q, qdot_d, dt: float, limits) -> np.ndarray:
    """Perfect velocity tracking: q' = q + qdot*dt, clamped to joint limits."""
    q = np.asarray(q, dtype=float)
    limits = np.asarray(limits, dtype=float)
    return np.clip(q + np.asarray(qdot_d, dtype=float) * dt,
                   limits[:, 0], limits[:, 1])


def draw_overlay(rgb: RgbImage, px, theta: float, half_len: float = 18.0) -> RgbImage:
    """Copy of rgb with the grasp marked: cyan angle line under a red dot."""
    out = rgb.pixels.copy()
    h, w = out.shape[:2]
    cx, cy = float(px[0]), float(px[1])
    for s in np.linspace(-half_len, half_len, int(8 * half_len) + 1):
        x = int(round(cx + s * math.cos(theta)))
        y = int(round(cy + s * math.sin(theta)))
        if 0 <= x < w and 0 <= y < h:
            out[y, x] = (0, 255, 255)
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            if dx * dx + dy * dy <= 4:
                x, y = int(round(cx)) + dx, int(round(cy)) + dy
                if 0 <= x < w and 0 <= y < h:
                    out[y, x] = (255, 0, 0)
    return RgbImage(out)


def _arm_for(cfg: PipelineConfig) -> kinematics.ArmModel:
    path = cfg.arm_file or kinematics.default_arm_path()
    return kinematics.load_arm(path)


def _vision_proposal(mode: str, rgb, depth, cfg, params, timestamp):
    if mode == "classical":
        return classical.classical_pipeline(rgb, cfg, timestamp)
    if mode == "learned":
        if params is None:
            raise VisionError("learned vision requires a params file")
        px, theta = learned.predict(params, rgb, depth)
        return classical.pixel_to_workspace(
            px, theta, CameraCalibration.from_config(cfg), timestamp)
    raise ValueError(f"unknown vision mode {mode!r}")


def run_control(arm: kinematics.ArmModel, q0, traj, cfg: PipelineConfig):
    """Run the PD loop over the trajectory plus settle time.

    Returns (final q, series of (t, ||e_p||, ||e_o||)).
    """
    gains = kinematics.Gains(cfg.k_p, cfg.k_d)
    dt = 1.0 / cfg.control_rate
    n_steps = int(round((traj.t_f - traj.t_i + cfg.settle_time) * cfg.control_rate))
    q = np.asarray(q0, dtype=float).copy()
    prev_e = None
    series = []
    for i in range(n_steps):
        t = traj.t_i + i * dt
        samp = trajectory.sample(traj, t)
        qdot, e = kinematics.control_step(arm, q, samp, gains, prev_e, dt,
                                          cfg.damping, cfg.qdot_max)
        q = step_plant(q, qdot, dt, arm.limits)
        prev_e = e
        series.append((t, float(np.linalg.norm(e.e_p)),
                       float(np.linalg.norm(e.e_o))))
    return q, series


def _yaw_error(R_current, R_target) -> float:
    try:
        return float(np.linalg.norm(so3.log_so3(R_current.T @ R_target)))
    except ValueError:
        return math.pi


def run_episode(cfg: PipelineConfig, seed: int, scene: Scene | None = None,
                rgb: RgbImage | None = None, depth: DepthImage | None = None,
                vision: str = "classical", params=None, proposals=None,
                out_dir=None) -> EpisodeReport:
    """One full episode: stream vision frames, denoise, plan, track, score.

    Success means the final position error is under pos_tol and the final
    yaw error under ang_tol. All randomness comes from the seed; reports are
    bit-identical across runs.
    """
    if scene is not None:
        rgb, depth = scene.rgb, scene.depth
    rng = np.random.default_rng([seed, 1])
    buffer = denoise.ProposalBuffer(cfg.window, cfg.distance_threshold)
    frames_attempted = 0
    last_vision_error = ""

    if vision == "file":
        for prop in sorted(proposals or [], key=lambda p: p.t):
            buffer.push(prop)
        now = max((p.t for p in buffer.proposals), default=cfg.window)
    else:
        if rgb is None:
            raise ValueError("image-based vision modes need a scene or rgb raster")
        n_frames = int(round(cfg.window * cfg.frame_rate))
        for k in range(n_frames):
            frames_attempted += 1
            frame_rgb, frame_depth = add_pixel_noise(rng, rgb, depth, cfg.noise_sigma)
            try:
                buffer.push(_vision_proposal(vision, frame_rgb, frame_depth, cfg,
                                             params, k / cfg.frame_rate))
            except VisionError as err:
                last_vision_error = str(err)
        now = cfg.window

    stats = {"frames_attempted": frames_attempted,
             "proposals_collected": len(buffer),
             "control_steps": 0}

    def finish(report: EpisodeReport) -> EpisodeReport:
        if out_dir is not None:
            write_episode_artifacts(report, cfg, out_dir, rgb)
        return report

    if len(buffer) == 0:
        reason = last_vision_error or "vision produced no proposals"
        return finish(EpisodeReport(None, False, reason, None, None, None,
                                    [], stats))

    final_prop = denoise.denoise(buffer, now)
    arm = _arm_for(cfg)
    start = kinematics.fk(arm, HOME_Q)
    try:
        traj = trajectory.plan(start, final_prop, cfg.grasp_z,
                               now, now + cfg.duration)
    except ValueError as err:
        return finish(EpisodeReport(final_prop, False, f"planning failed: {err}",
                                    None, None, None, [], stats))

    q, series = run_control(arm, HOME_Q, traj, cfg)
    stats["control_steps"] = len(series)
    pose = kinematics.fk(arm, q)
    p_target = np.array([final_prop.x, final_prop.y, cfg.grasp_z])
    R_target = so3.grasp_orientation(final_prop.theta)
    pos_err = float(np.linalg.norm(pose.p - p_target))
    yaw_err = _yaw_error(pose.R, R_target)
    success = pos_err < cfg.pos_tol and yaw_err < cfg.ang_tol
    reason = "" if success else "tracking tolerance not met"

    px_err = None
    if scene is not None and scene.label is not None:
        cal = CameraCalibration.from_config(cfg)
        px_err = float(np.linalg.norm(cal.to_pixel(final_prop.target)
                                      - scene.label[0]))
    return finish(EpisodeReport(final_prop, success, reason, pos_err, yaw_err,
                                px_err, series, stats))


def report_to_dict(report: EpisodeReport) -> dict:
    prop = None
    if report.proposal is not None:
        p = report.proposal
        prop = {"x": p.x, "y": p.y, "theta": p.theta, "t": p.t}
    return {
        "success": report.success,
        "reason": report.reason,
        "proposal": prop,
        "final_pos_err": report.final_pos_err,
        "final_yaw_err": report.final_yaw_err,
        "proposal_px_err": report.proposal_px_err,
        "stats": report.stats,
    }


def write_episode_artifacts(report: EpisodeReport, cfg: PipelineConfig,
                            out_dir, rgb: RgbImage | None) -> None:
    """report.json + trace.csv (+ overlay.ppm when an image is available)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
    lines = ["t,pos_err,rot_err"]
    lines += [f"{t!r},{pe!r},{re_!r}" for t, pe, re_ in report.series]
    (out / "trace.csv").write_text("\n".join(lines) + "\n")
    if rgb is not None:
        if report.proposal is not None:
            cal = CameraCalibration.from_config(cfg)
            px = cal.to_pixel(report.proposal.target)
            overlay = draw_overlay(rgb, px, report.proposal.theta)
        else:
            overlay = RgbImage(rgb.pixels.copy())
        image_io.save_ppm(overlay, out / "overlay.ppm")


SUMMARY_HEADER = "episode,success,pos_err,yaw_err,proposal_px_err"


def _fmt(value) -> str:
    return "nan" if value is None else repr(value)


def run_batch(cfg: PipelineConfig, n: int, seed: int, vision: str = "classical",
              params=None, out_dir=None):
    """n seeded episodes on generated scenes; returns (rows, success_rate,
    good_grasp_rate) and writes summary.csv when out_dir is given."""
    rows = []
    for i in range(n):
        ep_seed = seed + i
        scene = generate_scene(ep_seed, cfg)
        ep_dir = Path(out_dir) / f"episode_{i:03d}" if out_dir is not None else None
        report = run_episode(cfg, ep_seed, scene=scene, vision=vision,
                             params=params, out_dir=ep_dir)
        rows.append({
            "episode": i,
            "success": report.success,
            "pos_err": report.final_pos_err,
            "yaw_err": report.final_yaw_err,
            "proposal_px_err": report.proposal_px_err,
        })
    success_rate = float(np.mean([r["success"] for r in rows])) if rows else 0.0
    good = [r["proposal_px_err"] is not None
            and r["proposal_px_err"] <= cfg.good_grasp_px for r in rows]
    good_rate = float(np.mean(good)) if rows else 0.0
    if out_dir is not None:
        lines = [SUMMARY_HEADER]
        lines += [f"{r['episode']},{int(r['success'])},{_fmt(r['pos_err'])},"
                  f"{_fmt(r['yaw_err'])},{_fmt(r['proposal_px_err'])}"
                  for r in rows]
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.csv").write_text("\n".join(lines) + "\n")
    return rows, success_rate, good_rate
