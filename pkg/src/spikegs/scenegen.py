"""Procedural ground truth: Gaussian scenes, spiral trajectories, per-readout frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from ._validation import check_random_state
from .splat import GaussianCloud, PinholeCamera, render


@dataclass(frozen=True)
class SceneSpec:
    count: int = 50
    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    scale_range: tuple = (0.06, 0.25)
    opacity_range: tuple = (0.6, 0.95)
    intensity_range: tuple = (0.15, 0.95)
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if np.any(np.asarray(self.bbox_max) <= np.asarray(self.bbox_min)):
            raise ValueError("bbox_max must exceed bbox_min on every axis")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be positive and ordered")
        for name in ("opacity_range", "intensity_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < 1:
                raise ValueError(f"{name} must lie inside (0, 1)")


def gen_scene(spec: SceneSpec = SceneSpec()) -> GaussianCloud:
    """Random anisotropic Gaussians inside the bounding box."""
    rng = check_random_state(spec.seed)
    n = spec.count
    lo, hi = np.asarray(spec.bbox_min, float), np.asarray(spec.bbox_max, float)
    positions = rng.uniform(lo, hi, size=(n, 3))
    log_lo, log_hi = np.log(spec.scale_range[0]), np.log(spec.scale_range[1])
    scales = np.exp(rng.uniform(log_lo, log_hi, size=(n, 3)))
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opac = rng.uniform(*spec.opacity_range, size=n)
    inten = rng.uniform(*spec.intensity_range, size=n)
    return GaussianCloud.from_activated(positions, scales, quats, opac, inten)


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 100.0
    fy: float = 100.0
    cx: float = 49.5
    cy: float = 49.5
    width: int = 100
    height: int = 100
    near: float = 0.01

    def as_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width,
                    height=self.height, near=self.near)


@dataclass(frozen=True)
class TrajectorySpec:
    radius: float = 4.0
    height_start: float = -0.5
    height_span: float = 1.0
    revolutions: float = 0.5
    start_angle: float = 0.0
    num_readouts: int = 240
    look_at: tuple = (0.0, 0.0, 0.0)
    intrinsics: Intrinsics = Intrinsics()

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.num_readouts < 2:
            raise ValueError("num_readouts must be >= 2")


class CameraTrajectory:
    """Poses keyed by readout index.

    Keyframes may be sparser than readouts; in between, translation (camera
    center) is interpolated linearly and rotation by slerp.
    """

    def __init__(self, cameras, timestamps=None):
        cameras = list(cameras)
        if not cameras:
            raise ValueError("trajectory needs at least one pose")
        ts = np.arange(len(cameras), dtype=np.float64) if timestamps is None else \
            np.asarray(timestamps, dtype=np.float64)
        if ts.shape != (len(cameras),):
            raise ValueError("one timestamp per camera is required")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        self.cameras = cameras
        self.timestamps = ts
        self._dense = bool(np.array_equal(ts, np.arange(len(cameras))))
        self._slerp = None

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, k: int) -> PinholeCamera:
        return self.cameras[k]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def pose_at(self, t: float) -> PinholeCamera:
        lo, hi = self.span
        if not lo <= t <= hi:
            raise ValueError(f"time {t} outside trajectory span [{lo}, {hi}]")
        if self._dense and float(t).is_integer():
            return self.cameras[int(t)]
        i = int(np.searchsorted(self.timestamps, t, side="right")) - 1
        i = min(i, len(self.cameras) - 2)
        if self.timestamps[i] == t or len(self.cameras) == 1:
            return self.cameras[i]
        if self._slerp is None:
            rots = Rotation.from_matrix(np.stack([c.R for c in self.cameras]))
            self._slerp = Slerp(self.timestamps, rots)
        t0, t1 = self.timestamps[i], self.timestamps[i + 1]
        w = (t - t0) / (t1 - t0)
        center = (1 - w) * self.cameras[i].center + w * self.cameras[i + 1].center
        R = self._slerp([t]).as_matrix()[0]
        return self.cameras[i].with_pose(R, -R @ center)


def gen_spiral(spec: TrajectorySpec = TrajectorySpec()) -> CameraTrajectory:
    """One camera per readout on a rising helix, each looking at ``spec.look_at``."""
    n = spec.num_readouts
    s = np.arange(n) / (n - 1)
    angles = spec.start_angle + 2 * np.pi * spec.revolutions * s
    target = np.asarray(spec.look_at, dtype=np.float64)
    heights = spec.height_start + spec.height_span * s
    cams = []
    for a, z in zip(angles, heights):
        eye = target + np.array([spec.radius * np.cos(a), spec.radius * np.sin(a), 0.0])
        eye[2] = z
        cams.append(PinholeCamera.look_at(eye, target, **spec.intrinsics.as_dict()))
    return CameraTrajectory(cams)


def render_gt_frames(cloud: GaussianCloud, trajectory: CameraTrajectory, background: float = 0.0,
                     readouts=None) -> np.ndarray:
    """Clean intensity frames (K, H, W), one render per readout pose."""
    idx = range(len(trajectory)) if readouts is None else readouts
    frames = np.stack([render(cloud, trajectory.pose_at(k), background).image for k in idx])
    return np.clip(frames, 0.0, 1.0)


def checker_sphere_frames(trajectory: CameraTrajectory, radius: float = 1.0, checks: int = 8,
                          background: float = 0.0, readouts=None) -> np.ndarray:
    """Ray-traced frames of a checkerboard-textured sphere at the origin.

    Used as ground truth that is not itself a Gaussian cloud, so reconstruction
    tests are not judged against their own forward model.
    """
    idx = range(len(trajectory)) if readouts is None else readouts
    frames = []
    for k in idx:
        cam = trajectory.pose_at(k)
        ys, xs = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
        dirs_cam = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs)], axis=-1)
        dirs = dirs_cam @ cam.R
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        o = cam.center
        b = dirs @ o
        c = o @ o - radius ** 2
        disc = b * b - c
        hit = disc >= 0
        tnear = -b - np.sqrt(np.where(hit, disc, 0.0))
        hit &= tnear > 0
        p = o + tnear[..., None] * dirs
        theta = np.arccos(np.clip(p[..., 2] / radius, -1, 1))
        phi = np.arctan2(p[..., 1], p[..., 0]) + np.pi
        cell = (np.floor(theta / np.pi * checks) + np.floor(phi / (2 * np.pi) * 2 * checks)) % 2
        shade = 0.25 + 0.6 * cell
        frames.append(np.where(hit, shade, background))
    return np.stack(frames)
