"""Gaussian splatting supervised by spike camera streams.

Modules:
    spike_sim   integrate-and-fire spike camera simulator
    recon       closed-form reconstructions (TFP, TFI)
    sim_net     blind-spot instant-mapping network with hand-written gradients
    splat       differentiable Gaussian rasterizer
    trainer     instant plus exposure-like loss optimization
    metrics     PSNR and SSIM
    scenegen    procedural scenes, trajectories and ground-truth frames
    io, cli     file formats and the ``spikegs`` command
"""

from .estimators import SpikeGaussianSplatter, SpikeInstantMapper
from .metrics import psnr, ssim
from .recon import ReconWindow, tfi, tfp
from .scenegen import CameraTrajectory, SceneSpec, TrajectorySpec, gen_scene, gen_spiral, render_gt_frames
from .sim_net import SimNetConfig, SimNetParams, SimSchedule, param_count, sim_forward, sim_predict, sim_train
from .spike_sim import SpikeCamParams, SpikeStream, simulate_ideal, simulate_poisson
from .splat import GaussianCloud, PinholeCamera, render, render_backward
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "SpikeGaussianSplatter", "SpikeInstantMapper", "psnr", "ssim", "ReconWindow", "tfi", "tfp",
    "CameraTrajectory", "SceneSpec", "TrajectorySpec", "gen_scene", "gen_spiral", "render_gt_frames",
    "SimNetConfig", "SimNetParams", "SimSchedule", "param_count", "sim_forward", "sim_predict", "sim_train",
    "SpikeCamParams", "SpikeStream", "simulate_ideal", "simulate_poisson", "GaussianCloud", "PinholeCamera",
    "render", "render_backward", "TrainConfig", "train",
]
