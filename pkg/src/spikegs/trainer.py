"""Spike-supervised Gaussian splatting optimization.

Two image losses drive the cloud:

* instantaneous: L1 between the render at the pose of readout ``t`` and a
  frozen instant image for ``t`` (normally the SIM output);
* exposure-like: L1 between the mean of ``K`` renders spread evenly over the
  ``T`` readouts around ``t`` and the firing rate over those readouts.

The total is ``instant_weight * L_instant + lam * L_exposure``; the defaults
(``instant_weight=1``, ``lam=1``) give the usual combined objective.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam
from .recon import ReconWindow, exposure_target, tfp_many
from .spike_sim import SpikeStream
from .splat import (PARAM_NAMES, GaussianCloud, SplatGradients, quat_to_rotmat, render,
                    render_backward)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    K: int = 5
    window: int = 33
    lam: float = 1.0
    instant_weight: float = 1.0
    iterations: int = 3000
    background: float = 0.0
    # learning rates follow the reference 3DGS parameter groups
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 0.05
    lr_intensity: float = 2.5e-3
    spatial_scale: float | None = None  # defaults to the trajectory extent
    densify: bool = True
    densify_from: int = 100
    densify_until: int = 2000
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4  # normalized-device units, as in reference 3DGS
    percent_dense: float = 0.01
    opacity_floor: float = 0.005
    max_gaussians: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.window < self.K:
            raise ValueError("window must be at least K readouts")
        if self.window % 2 == 0:
            raise ValueError("window must be odd")
        if self.K > 1 and (self.window - 1) % (self.K - 1):
            raise ValueError("K - 1 must divide window - 1 so poses land on readouts")
        if self.lam < 0 or self.instant_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class LossReport:
    iteration: int
    instant: float
    exposure: float
    total: float


def l1(a: np.ndarray, b: np.ndarray):
    """Mean absolute difference and its gradient w.r.t. ``a`` (0 at ties)."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_instant(render_image, sim_image) -> float:
    a, b = np.asarray(render_image), np.asarray(sim_image)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return l1(a, b)[0]


def exposure_readouts(t: int, cfg: TrainConfig) -> np.ndarray:
    """Readout indices of the K poses spread evenly over the window around ``t``."""
    h = cfg.window // 2
    if cfg.K == 1:
        return np.array([t])
    return t - h + np.arange(cfg.K) * ((cfg.window - 1) // (cfg.K - 1))


def _check_window(t, cfg, n_readouts, n_poses):
    h = cfg.window // 2
    if t - h < 0 or t + h >= min(n_readouts, n_poses):
        raise ValueError(f"exposure window around readout {t} exceeds the stream/trajectory")


def _exposure_forward(cloud, trajectory, t, cfg):
    outs = [render(cloud, trajectory.pose_at(int(k)), cfg.background) for k in exposure_readouts(t, cfg)]
    blurred = np.mean([o.image for o in outs], axis=0)
    return blurred, outs


def loss_exposure(cloud: GaussianCloud, trajectory, t: int, cfg: TrainConfig, stream: SpikeStream,
                  target=None) -> float:
    """L1 between the mean of K renders around ``t`` and the windowed firing rate."""
    _check_window(t, cfg, stream.num_readouts, len(trajectory))
    if target is None:
        target = exposure_target(stream, ReconWindow(t, cfg.window // 2))
    blurred, _ = _exposure_forward(cloud, trajectory, t, cfg)
    return l1(blurred, target)[0]


def total_loss(instant: float, exposure: float, cfg: TrainConfig, iteration: int = 0) -> LossReport:
    """Weighted sum of the two losses; a term with weight 0 is left out (it may be NaN)."""
    total = 0.0
    if cfg.instant_weight > 0:
        total += cfg.instant_weight * float(instant)
    if cfg.lam > 0:
        total += cfg.lam * float(exposure)
    return LossReport(iteration, float(instant), float(exposure), total)


def loss_and_grads(cloud, trajectory, t, cfg, instant_target, exposure_tgt, iteration=0):
    """Evaluate both losses at readout ``t`` and backpropagate their weighted sum.

    Each distinct pose is rendered once: with odd ``K`` the middle exposure
    pose is the instant pose, and its backward pass takes both gradients.  A
    loss whose weight is 0 is skipped and reported as NaN.

    Returns:
        ``(LossReport, SplatGradients, visible)`` where ``visible`` flags the
        Gaussians that produced at least one fragment in any rendered pose.
    """
    t = int(t)
    readouts = exposure_readouts(t, cfg).tolist() if cfg.lam > 0 else []
    poses = sorted(set(readouts) | ({t} if cfg.instant_weight > 0 else set()))
    outs = {k: render(cloud, trajectory.pose_at(k), cfg.background) for k in poses}
    grad_images = {k: 0.0 for k in poses}

    l_inst = l_exp = float("nan")
    if cfg.instant_weight > 0:
        l_inst, g_inst = l1(outs[t].image, instant_target)
        grad_images[t] = grad_images[t] + cfg.instant_weight * g_inst
    if cfg.lam > 0:
        blurred = np.mean([outs[k].image for k in readouts], axis=0)
        l_exp, g_exp = l1(blurred, exposure_tgt)
        g_each = (cfg.lam / cfg.K) * g_exp
        for k in readouts:
            grad_images[k] = grad_images[k] + g_each

    grads = SplatGradients.zeros(len(cloud))
    visible = np.zeros(len(cloud), dtype=bool)
    for k in poses:
        grads += render_backward(cloud, trajectory.pose_at(k), cfg.background, grad_images[k], outs[k])
        visible[outs[k].fragments.gid] = True
    return total_loss(l_inst, l_exp, cfg, iteration), grads, visible


# ---------------------------------------------------------------------------
# Adaptive density control
# ---------------------------------------------------------------------------


@dataclass
class DensifyResult:
    cloud: GaussianCloud
    keep: np.ndarray  # indices of surviving original Gaussians, in order
    n_new: int  # Gaussians appended after the survivors
    n_cloned: int = 0
    n_split: int = 0
    n_pruned: int = 0


def densify_prune(cloud: GaussianCloud, grad_accum: np.ndarray, counts: np.ndarray, cfg: TrainConfig,
                  extent: float, image_width: int, rng=None) -> DensifyResult:
    """Clone or split high-gradient Gaussians, then drop near-transparent ones.

    ``grad_accum / counts`` is the mean image-plane position-gradient norm in
    pixels; it is compared with ``densify_grad_threshold`` after conversion
    from normalized-device units.  Small Gaussians are cloned, large ones
    (largest scale above ``percent_dense * extent``) are split into two
    samples with scales divided by 1.6.
    """
    rng = np.random.default_rng(rng)
    n = len(cloud)
    mean_grad = np.where(counts > 0, grad_accum / np.maximum(counts, 1), 0.0)
    # d/d(ndc) = d/d(pixel) * width / 2
    selected = mean_grad * (image_width / 2.0) >= cfg.densify_grad_threshold
    budget = max(cfg.max_gaussians - n, 0)
    if selected.sum() > budget:
        order = np.argsort(-mean_grad, kind="stable")
        selected = np.zeros(n, dtype=bool)
        selected[order[:budget]] = True
    big = cloud.scales.max(axis=1) > cfg.percent_dense * extent
    clone = selected & ~big
    split = selected & big

    parts = [cloud.subset(clone)]
    if split.any():
        src = cloud.subset(split)
        R = quat_to_rotmat(src.quats)
        for _ in range(2):
            offs = rng.standard_normal((len(src), 3)) * src.scales
            child = src.copy()
            child.positions = src.positions + np.einsum("nij,nj->ni", R, offs)
            child.log_scales = src.log_scales - np.log(1.6)
            parts.append(child)
    new = parts[0]
    for p in parts[1:]:
        new = new.concat(p)

    keep_mask = ~split & (cloud.opacities >= cfg.opacity_floor)
    new_keep = new.opacities >= cfg.opacity_floor
    new = new.subset(new_keep)
    keep = np.flatnonzero(keep_mask)
    out = cloud.subset(keep).concat(new)
    if len(out) == 0:
        # never leave the optimizer with an empty cloud
        keep = np.array([int(np.argmax(cloud.opacities))])
        out, new = cloud.subset(keep), cloud.subset(np.zeros(0, dtype=np.int64))
    n_pruned = int(np.sum(~split & ~keep_mask) + np.sum(~new_keep))
    return DensifyResult(out, keep, len(new), int(clone.sum()), int(split.sum()), n_pruned)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def trajectory_extent(trajectory) -> float:
    centers = np.stack([c.center for c in trajectory.cameras])
    return 1.1 * float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)) or 1.0)


def valid_centers(num_readouts: int, n_poses: int, cfg: TrainConfig) -> np.ndarray:
    h = cfg.window // 2
    return np.arange(h, min(num_readouts, n_poses) - h)


@dataclass
class TrainResult:
    cloud: GaussianCloud
    history: list = field(default_factory=list)
    seconds: float = 0.0
    iterations: int = 0

    @property
    def seconds_per_iteration(self) -> float:
        return self.seconds / max(self.iterations, 1)


def _lr_groups(cfg: TrainConfig, spatial: float) -> dict:
    return {
        "positions": cfg.lr_position_init * spatial,
        "log_scales": cfg.lr_scale,
        "quats": cfg.lr_rotation,
        "opacity_logits": cfg.lr_opacity,
        "intensity_logits": cfg.lr_intensity,
    }


def _position_lr(cfg: TrainConfig, spatial: float, step: int) -> float:
    if cfg.iterations <= 1:
        return cfg.lr_position_init * spatial
    frac = min(step / cfg.iterations, 1.0)
    return spatial * float(np.exp((1 - frac) * np.log(cfg.lr_position_init) + frac * np.log(cfg.lr_position_final)))


def train(stream: SpikeStream, trajectory, init_cloud: GaussianCloud, instant_images,
          cfg: TrainConfig = TrainConfig(), centers=None, log_every: int = 0) -> TrainResult:
    """Optimize a Gaussian cloud against one spike stream.

    Args:
        stream: the camera's spike readouts.
        trajectory: one pose per readout (``pose_at(k)`` for readout ``k``).
        init_cloud: starting cloud; it is copied, never mutated.
        instant_images: frozen instant targets, either an array indexed by
            readout (``instant_images[t]``), a dict keyed by readout or a
            callable ``t -> image``.  Normally SIM outputs.
        cfg: optimization settings.
        centers: readouts eligible as window centers; defaults to every
            readout whose full window fits.
        log_every: log losses every this many iterations (0 disables).

    Returns:
        TrainResult with the final cloud and the per-iteration LossReport list.
    """
    n_poses = len(trajectory)
    if n_poses < stream.num_readouts:
        raise ValueError("trajectory must provide a pose for every readout")
    all_valid = valid_centers(stream.num_readouts, n_poses, cfg)
    centers = all_valid if centers is None else np.asarray(centers, dtype=np.int64)
    if cfg.iterations and centers.size == 0:
        raise ValueError("no readout has a full exposure window")
    for t in (centers.min(), centers.max()) if centers.size else ():
        _check_window(int(t), cfg, stream.num_readouts, n_poses)

    if callable(instant_images):
        get_instant = instant_images
    else:
        get_instant = instant_images.__getitem__
    exposure = dict(zip(centers.tolist(), tfp_many(stream, centers, cfg.window // 2)))

    rng = np.random.default_rng(cfg.seed)
    cloud = init_cloud.copy()
    extent = trajectory_extent(trajectory)
    spatial = cfg.spatial_scale if cfg.spatial_scale is not None else extent
    opt = Adam(cloud.params(), lr=_lr_groups(cfg, spatial), eps=1e-15)
    width = trajectory.pose_at(int(centers[0]) if centers.size else 0).width
    grad_accum = np.zeros(len(cloud))
    counts = np.zeros(len(cloud))
    history = []
    start = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        opt.set_lr("positions", _position_lr(cfg, spatial, it))
        t = int(rng.choice(centers))
        report, grads, visible = loss_and_grads(cloud, trajectory, t, cfg, get_instant(t), exposure[t], it)
        history.append(report)
        opt.step(grads.params())
        if log_every and it % log_every == 0:
            logger.info("iter %d  instant %.5f  exposure %.5f  total %.5f  n=%d", it,
                        report.instant, report.exposure, report.total, len(cloud))

        if cfg.densify and it <= cfg.densify_until:
            grad_accum[visible] += np.linalg.norm(grads.means2d[visible], axis=1)
            counts[visible] += 1
            if it >= cfg.densify_from and it % cfg.densify_interval == 0:
                res = densify_prune(cloud, grad_accum, counts, cfg, extent, width, rng)
                cloud = res.cloud
                opt.rebind(cloud.params(), res.keep, res.n_new)
                grad_accum = np.zeros(len(cloud))
                counts = np.zeros(len(cloud))
    seconds = time.perf_counter() - start
    return TrainResult(cloud, history, seconds, cfg.iterations)


def render_views(cloud: GaussianCloud, cameras, background: float = 0.0) -> np.ndarray:
    return np.stack([render(cloud, cam, background).image for cam in cameras])


__all__ = [
    "TrainConfig", "LossReport", "TrainResult", "DensifyResult", "l1", "loss_instant", "loss_exposure",
    "total_loss", "loss_and_grads", "densify_prune", "train", "exposure_readouts", "render_views",
    "valid_centers", "trajectory_extent", "PARAM_NAMES",
]
