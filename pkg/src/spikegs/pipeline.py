"""End-to-end desk-scale experiments: toy dataset, SIM fit, splat training, held-out scoring."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .metrics import psnr, ssim
from .recon import tfi, tfp_many
from .scenegen import (CameraTrajectory, Intrinsics, SceneSpec, TrajectorySpec, gen_scene, gen_spiral,
                       render_gt_frames)
from .sim_net import SimNetConfig, SimSchedule, sim_predict, sim_train
from .spike_sim import SpikeCamParams, SpikeStream, simulate_poisson
from .splat import GaussianCloud, logit
from .trainer import TrainConfig, TrainResult, render_views, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyConfig:
    """A small synthetic capture: Gaussian scene, spiral orbit, Poisson spikes."""

    gaussians: int = 50
    image_size: int = 100
    focal: float = 100.0
    readouts: int = 240
    radius: float = 4.0
    revolutions: float = 0.5
    height_span: float = 1.0
    photon_scale: float = 50.0
    dark_rate: float = 0.0
    background: float = 0.0
    holdout_stride: int = 8
    eval_margin: int = 48
    seed: int = 0


@dataclass
class ToyDataset:
    config: ToyConfig
    gt_cloud: GaussianCloud
    trajectory: CameraTrajectory
    frames: np.ndarray
    stream: SpikeStream
    test_readouts: np.ndarray
    bbox: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

    def train_centers(self, window: int) -> np.ndarray:
        h = window // 2
        c = np.arange(h, self.stream.num_readouts - h)
        return c[~np.isin(c, self.test_readouts)]

    @property
    def test_cameras(self) -> list:
        return [self.trajectory[int(k)] for k in self.test_readouts]

    @property
    def test_frames(self) -> np.ndarray:
        return self.frames[self.test_readouts]


def make_toy_dataset(cfg: ToyConfig = ToyConfig()) -> ToyDataset:
    scene = SceneSpec(count=cfg.gaussians, seed=cfg.seed)
    size = cfg.image_size
    intr = Intrinsics(fx=cfg.focal, fy=cfg.focal, cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size)
    traj_spec = TrajectorySpec(radius=cfg.radius, height_start=-cfg.height_span / 2, height_span=cfg.height_span,
                               revolutions=cfg.revolutions, num_readouts=cfg.readouts, intrinsics=intr)
    cloud = gen_scene(scene)
    trajectory = gen_spiral(traj_spec)
    frames = render_gt_frames(cloud, trajectory, cfg.background)
    cam = SpikeCamParams(photon_scale=cfg.photon_scale, dark_rate=cfg.dark_rate)
    stream = simulate_poisson(frames, cam, seed=cfg.seed + 1)
    m = cfg.eval_margin
    ks = np.arange(m, cfg.readouts - m)
    test = ks[(ks - m) % cfg.holdout_stride == cfg.holdout_stride // 2]
    return ToyDataset(cfg, cloud, trajectory, frames, stream, test, (scene.bbox_min, scene.bbox_max))


def random_init_cloud(bbox, count: int = 200, seed=0, opacity: float = 0.1) -> GaussianCloud:
    """Uniform random points in a box, sized by nearest-neighbour spacing."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bbox[0], float), np.asarray(bbox[1], float)
    pos = rng.uniform(lo, hi, size=(count, 3))
    k = min(4, count)
    if count > 1:
        d, _ = cKDTree(pos).query(pos, k=k)
        dist = np.sqrt(np.mean(d[:, 1:] ** 2, axis=1))
    else:
        dist = np.array([0.1 * float(np.min(hi - lo))])
    log_s = np.repeat(np.log(np.maximum(dist, 1e-7))[:, None], 3, axis=1)
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    return GaussianCloud(pos, log_s, quats, np.full(count, logit(opacity)), np.zeros(count))


def heldout_scores(cloud: GaussianCloud, data: ToyDataset) -> dict:
    renders = render_views(cloud, data.test_cameras, data.config.background)
    gts = data.test_frames
    p = [psnr(r, g) for r, g in zip(renders, gts)]
    s = [ssim(r, g) for r, g in zip(renders, gts)]
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s))}


def fit_sim(data: ToyDataset, cfg: SimNetConfig = SimNetConfig(), schedule: SimSchedule = SimSchedule()):
    params, _ = sim_train(data.stream, cfg, schedule)
    return params


@dataclass
class RunResult:
    name: str
    psnr: float
    ssim: float
    seconds: float
    seconds_per_iteration: float
    n_gaussians: int
    train: TrainResult = field(repr=False, default=None)


def instant_targets(data: ToyDataset, source: str, centers, sim=None, tfp_window: int = 33) -> dict:
    """Frozen instant images keyed by readout for the given source."""
    centers = np.asarray(centers, dtype=np.int64)
    if source == "sim":
        params, cfg = sim
        imgs = sim_predict(params, cfg, data.stream, centers)
    elif source == "tfp":
        imgs = tfp_many(data.stream, centers, tfp_window // 2)
    elif source == "tfi":
        imgs = np.stack([tfi(data.stream, int(t)) for t in centers])
    else:
        raise ValueError(f"unknown instant source {source!r}")
    return dict(zip(centers.tolist(), imgs))


def run_training(data: ToyDataset, name: str, cfg: TrainConfig, targets: dict, init_count: int = 200,
                 init_seed: int = 0, log_every: int = 0) -> RunResult:
    init = random_init_cloud(data.bbox, init_count, seed=init_seed)
    centers = np.array(sorted(set(data.train_centers(cfg.window)) & set(targets)))
    start = time.perf_counter()
    res = train(data.stream, data.trajectory, init, targets, replace(cfg, background=data.config.background),
                centers=centers, log_every=log_every)
    seconds = time.perf_counter() - start
    scores = heldout_scores(res.cloud, data)
    logger.info("%s: PSNR %.2f dB, SSIM %.4f, %d Gaussians, %.1fs", name, scores["psnr"], scores["ssim"],
                len(res.cloud), seconds)
    return RunResult(name, scores["psnr"], scores["ssim"], seconds, res.seconds_per_iteration, len(res.cloud), res)


ABLATION_MODES = {
    "exposure_only": dict(instant_weight=0.0, lam=1.0),
    "instant_only": dict(instant_weight=1.0, lam=0.0),
    "combined": dict(instant_weight=1.0, lam=1.0),
}


def ablate_losses(data: ToyDataset, sim, cfg: TrainConfig = TrainConfig(), **kw) -> list[RunResult]:
    """Train once per loss configuration from the same initialization."""
    centers = data.train_centers(cfg.window)
    targets = instant_targets(data, "sim", centers, sim)
    results = []
    for name, weights in ABLATION_MODES.items():
        results.append(run_training(data, name, replace(cfg, **weights), targets, **kw))
    return results
