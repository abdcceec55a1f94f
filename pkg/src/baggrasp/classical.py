"""Heuristic grasp proposal pipeline for ball-in-bag scenes.

Blur the grayscale image, run Canny edge detection, trace edge contours into
polygons, locate the ball by color thresholding, then pick the large contour
whose mean sits closest to 1.1 ball radii from the ball center. The winning
mean and its regression angle are scaled/shifted into workspace coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .image_io import GrayImage, RgbImage, to_gray


class VisionError(RuntimeError):
    """A vision stage could not produce a grasp proposal."""


class BallNotFound(VisionError):
    pass


class NoViableContour(VisionError):
    pass


@dataclass
class BallDetection:
    center: np.ndarray  # (x, y) pixels
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        if self.radius <= 0:
            raise ValueError("ball radius must be > 0")


@dataclass
class CameraCalibration:
    """Per-axis affine pixel -> workspace map: meters = scale * px + shift."""

    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float).reshape(2)
        self.shift = np.asarray(self.shift, dtype=float).reshape(2)
        if np.any(self.scale == 0.0):
            raise ValueError("calibration scale components must be nonzero")

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "CameraCalibration":
        return cls((cfg.scale_x, cfg.scale_y), (cfg.shift_x, cfg.shift_y))

    def to_pixel(self, target) -> np.ndarray:
        return (np.asarray(target, dtype=float) - self.shift) / self.scale


@dataclass
class GraspProposal:
    """Candidate grasp: workspace target (m), gripper yaw (rad), timestamp (s)."""

    x: float
    y: float
    theta: float
    t: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("grasp target must be finite")
        if not (-math.pi / 2 < self.theta <= math.pi / 2):
            raise ValueError(f"theta {self.theta} outside (-pi/2, pi/2]")

    @property
    def target(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_json_line(self) -> str:
        return json.dumps({"x": self.x, "y": self.y, "theta": self.theta, "t": self.t})

    @staticmethod
    def from_json_line(line: str) -> "GraspProposal":
        obj = json.loads(line)
        return GraspProposal(float(obj["x"]), float(obj["y"]),
                             float(obj["theta"]), float(obj["t"]))


def wrap_half_pi(theta: float) -> float:
    """Wrap an angle into (-pi/2, pi/2] (a parallel jaw is symmetric under pi)."""
    a = (theta + math.pi / 2) % math.pi - math.pi / 2
    return math.pi / 2 if a == -math.pi / 2 else a


def gaussian_blur(image: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), clamped borders."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    src = image.pixels
    padded = np.pad(src, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(src)
    for k in range(2 * radius + 1):
        out += kernel[k] * padded[:, k:k + src.shape[1]]
    padded = np.pad(out, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(src)
    for k in range(2 * radius + 1):
        out += kernel[k] * padded[k:k + src.shape[0], :]
    return GrayImage(np.clip(out, 0.0, 1.0))


def sobel_gradients(image: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Sobel x/y gradients, scaled so a unit step edge has magnitude 1."""
    p = np.pad(image.pixels, 1, mode="edge")
    gx = (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]
          - p[:-2, :-2] - 2.0 * p[1:-1, :-2] - p[2:, :-2]) / 4.0
    gy = (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]
          - p[:-2, :-2] - 2.0 * p[:-2, 1:-1] - p[:-2, 2:]) / 4.0
    return gx, gy


# Offsets (dx, dy) of the 8 compass directions, index = round(angle / 45deg).
_COMPASS = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def _shifted(mag: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """mag sampled at (x+dx, y+dy) with zeros outside the frame."""
    out = np.zeros_like(mag)
    h, w = mag.shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = mag[ys_src, xs_src]
    return out


def canny(image: GrayImage, low: float, high: float) -> np.ndarray:
    """Canny edge mask: Sobel -> non-maximum suppression -> hysteresis.

    Gradient directions are quantized to the 8 compass sectors; a pixel
    survives suppression iff its magnitude strictly exceeds the neighbor
    against the gradient and is >= the neighbor along it (the asymmetry
    thins symmetric two-pixel ridges to one pixel). Strong pixels have
    magnitude >= high; weak ones (>= low) are kept only when 8-connected
    to a strong pixel.
    """
    if not (0.0 < low < high <= 1.0):
        raise ValueError("require 0 < low < high <= 1")
    gx, gy = sobel_gradients(image)
    mag = np.hypot(gx, gy)
    sector = np.round(np.arctan2(gy, gx) / (np.pi / 4.0)).astype(int) % 8

    thin = np.zeros(mag.shape, dtype=bool)
    for q, (dx, dy) in enumerate(_COMPASS):
        along = _shifted(mag, dx, dy)
        against = _shifted(mag, -dx, -dy)
        sel = (sector == q) & (mag >= along) & (mag > against)
        thin |= sel
    thin &= mag > 0

    strong = thin & (mag >= high)
    weak = thin & (mag >= low)
    keep = strong.copy()
    while True:
        grown = keep.copy()
        for dx, dy in _COMPASS:
            grown |= _shifted(keep, dx, dy).astype(bool)
        grown &= weak
        grown |= keep
        if np.array_equal(grown, keep):
            return keep
        keep = grown


def detect_ball(image: RgbImage, color_low, color_high) -> BallDetection:
    """Centroid and equivalent-area-disc radius of pixels inside a color box."""
    lo = np.asarray(color_low, dtype=np.uint8)
    hi = np.asarray(color_high, dtype=np.uint8)
    if np.any(lo > hi):
        raise ValueError("color_low must be componentwise <= color_high")
    px = image.pixels
    mask = np.all((px >= lo) & (px <= hi), axis=2)
    count = int(mask.sum())
    if count == 0:
        raise BallNotFound("ball not found: no pixels inside the color range")
    ys, xs = np.nonzero(mask)
    center = np.array([xs.mean(), ys.mean()])
    return BallDetection(center, math.sqrt(count / math.pi))


_MOORE = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)]


def _trace_boundary(component: set[tuple[int, int]]) -> np.ndarray:
    """Moore boundary trace of an 8-connected pixel set, clockwise from the
    topmost-leftmost pixel. Points are (x, y)."""
    start = min(component, key=lambda p: (p[1], p[0]))
    if len(component) == 1:
        return np.array([start, start], dtype=float)
    # Enter from the west; that neighbor is background by choice of start.
    backtrack = (start[0] - 1, start[1])
    path = [start]
    current = start
    first_move = None
    for _ in range(4 * len(component) + 8):
        base = _MOORE.index((backtrack[0] - current[0], backtrack[1] - current[1]))
        nxt = None
        for k in range(1, 9):
            dx, dy = _MOORE[(base + k) % 8]
            cand = (current[0] + dx, current[1] + dy)
            if cand in component:
                nxt = cand
                prev_dx, prev_dy = _MOORE[(base + k - 1) % 8]
                backtrack = (current[0] + prev_dx, current[1] + prev_dy)
                break
        if nxt is None:
            break
        if first_move is None:
            first_move = nxt
        elif current == start and nxt == first_move:
            break
        path.append(nxt)
        current = nxt
    if path[-1] == start and len(path) > 1:
        path.pop()
    return np.array(path, dtype=float)


def find_contours(mask: np.ndarray) -> list[np.ndarray]:
    """Boundary polygons of the 8-connected components of an edge mask.

    Components smaller than 3 pixels are dropped. Each polygon is an (N, 2)
    array of (x, y) vertices in trace order.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    polygons: list[np.ndarray] = []
    ys, xs = np.nonzero(mask)
    for y0, x0 in zip(ys, xs):
        if seen[y0, x0]:
            continue
        stack = [(x0, y0)]
        seen[y0, x0] = True
        component = set()
        while stack:
            x, y = stack.pop()
            component.add((x, y))
            for dx, dy in _MOORE:
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((nx, ny))
        if len(component) >= 3:
            polygons.append(_trace_boundary(component))
    return polygons


def polygon_mean(polygon: np.ndarray) -> np.ndarray:
    poly = np.asarray(polygon, dtype=float)
    if poly.size == 0:
        raise ValueError("polygon is empty")
    return poly.mean(axis=0)


def polygon_theta(polygon: np.ndarray) -> float:
    """Feature angle atan(slope) from the least-squares line y = m x + c.

    Vertical features (x variance under 1e-9) return the pi/2 range boundary.
    """
    poly = np.asarray(polygon, dtype=float)
    if len(poly) < 2:
        raise ValueError("need at least 2 points")
    x, y = poly[:, 0], poly[:, 1]
    var_x = np.mean((x - x.mean()) ** 2)
    var_y = np.mean((y - y.mean()) ** 2)
    if var_x < 1e-9 and var_y < 1e-9:
        raise ValueError("degenerate polygon: all points identical")
    if var_x < 1e-9:
        return math.pi / 2
    slope = np.mean((x - x.mean()) * (y - y.mean())) / var_x
    return math.atan(slope)


def perimeter(polygon: np.ndarray) -> float:
    """Sum of consecutive vertex distances, closing the loop."""
    poly = np.asarray(polygon, dtype=float)
    diffs = np.diff(np.vstack([poly, poly[:1]]), axis=0)
    return float(np.hypot(diffs[:, 0], diffs[:, 1]).sum())


def select_grasp(polygons, ball: BallDetection, perimeter_min: float):
    """Pick the contour mean nearest 1.1 radii from the ball center.

    Only polygons with perimeter > perimeter_min compete; ties go to the
    larger perimeter, then to input order. Returns (mean point, angle).
    """
    if perimeter_min <= 0:
        raise ValueError("perimeter_min must be > 0")
    best = None
    for idx, poly in enumerate(polygons):
        per = perimeter(poly)
        if per <= perimeter_min:
            continue
        mean = polygon_mean(poly)
        score = abs(np.linalg.norm(mean - ball.center) - 1.1 * ball.radius)
        key = (score, -per, idx)
        if best is None or key < best[0]:
            best = (key, mean, poly)
    if best is None:
        raise NoViableContour("no viable contour above the perimeter threshold")
    return best[1], polygon_theta(best[2])


def pixel_to_workspace(point, theta: float, cal: CameraCalibration,
                       timestamp: float = 0.0) -> GraspProposal:
    """Affine-map a pixel point into workspace meters; theta passes through."""
    p = np.asarray(point, dtype=float).reshape(2)
    target = cal.scale * p + cal.shift
    return GraspProposal(float(target[0]), float(target[1]), theta, timestamp)


def classical_pipeline(rgb: RgbImage, cfg: PipelineConfig,
                       timestamp: float = 0.0) -> GraspProposal:
    """Full classical path: blur, Canny, contours, ball, selection, calibration."""
    gray = gaussian_blur(to_gray(rgb), cfg.sigma)
    edges = canny(gray, cfg.canny_low, cfg.canny_high)
    polygons = find_contours(edges)
    ball = detect_ball(rgb, cfg.color_low, cfg.color_high)
    mean, theta = select_grasp(polygons, ball, cfg.perimeter_min)
    return pixel_to_workspace(mean, theta, CameraCalibration.from_config(cfg), timestamp)
