"""scikit-learn style wrappers around the functional API.

``SpikeInstantMapper`` learns a per-scene SIM network from a spike stream
(``fit``) and maps spike windows to instant images (``transform``).
``SpikeGaussianSplatter`` fits a Gaussian cloud to a spike stream and its
camera trajectory (``fit(stream, trajectory)``) and renders novel views
(``predict(cameras)``).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_stream
from .metrics import psnr
from .recon import tfi, tfp_many
from .scenegen import CameraTrajectory
from .sim_net import SimNetConfig, SimSchedule, sim_loss, sim_predict, sim_train, extract_windows
from .splat import GaussianCloud, PinholeCamera
from .trainer import TrainConfig, render_views, train, valid_centers


def _default_centers(stream, window: int) -> np.ndarray:
    h = window // 2
    centers = np.arange(h, stream.num_readouts - h)
    if centers.size == 0:
        raise ValueError(f"stream of {stream.num_readouts} readouts is shorter than the {window}-readout window")
    return centers


class SpikeInstantMapper(TransformerMixin, BaseEstimator):
    """Self-supervised blind-spot mapping from spike windows to instant images.

    Parameters mirror :class:`SimNetConfig` (``m``, ``n``, ``hidden``,
    ``window``) and :class:`SimSchedule` (``steps``, ``lr``, ``lr_final``,
    ``batch_size``, ``crop``).
    """

    def __init__(self, m=3, n=3, hidden=32, window=33, steps=5000, lr=1e-3, lr_final=1e-4, batch_size=1,
                 crop=64, random_state=0):
        self.m = m
        self.n = n
        self.hidden = hidden
        self.window = window
        self.steps = steps
        self.lr = lr
        self.lr_final = lr_final
        self.batch_size = batch_size
        self.crop = crop
        self.random_state = random_state

    def _config(self) -> SimNetConfig:
        return SimNetConfig(m=self.m, n=self.n, hidden=self.hidden, window=self.window)

    def fit(self, X, y=None, init=None):
        """Train on one stream; ``y`` is ignored (the targets come from the spikes)."""
        stream = check_stream(X)
        cfg = self._config()
        schedule = SimSchedule(steps=self.steps, lr=self.lr, lr_final=self.lr_final,
                               batch_size=self.batch_size, crop=self.crop, seed=self.random_state)
        self.params_, state = sim_train(stream, cfg, schedule, init=init)
        self.config_ = cfg
        self.history_ = state.history
        self.n_readouts_ = stream.num_readouts
        return self

    def transform(self, X, centers=None) -> np.ndarray:
        """Instant images (len(centers), H, W); by default one per readout with a full window."""
        check_is_fitted(self, "params_")
        stream = check_stream(X)
        if centers is None:
            centers = _default_centers(stream, self.window)
        return sim_predict(self.params_, self.config_, stream, centers)

    def score(self, X, y=None, centers=None) -> float:
        """Negative self-supervised L1 on the given windows (higher is better)."""
        check_is_fitted(self, "params_")
        stream = check_stream(X)
        if centers is None:
            centers = _default_centers(stream, self.window)
        windows = extract_windows(stream, np.asarray(centers), self.window)
        return -sim_loss(self.params_, self.config_, windows)


class SpikeGaussianSplatter(BaseEstimator):
    """Gaussian-splatting scene fitted to spikes with instant and exposure losses.

    ``instant_source`` chooses the frozen instant images: ``"sim"`` (a
    ``SpikeInstantMapper``, fitted on the same stream when ``mapper`` is not
    already fitted), ``"tfp"`` (firing rate over ``tfp_window`` readouts) or
    ``"tfi"``.
    """

    def __init__(self, K=5, window=33, lam=1.0, instant_weight=1.0, iterations=3000, densify=True,
                 max_gaussians=1000, init_count=200, init_opacity=0.1, bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
                 background=0.0, instant_source="sim", tfp_window=33, mapper=None, random_state=0):
        self.K = K
        self.window = window
        self.lam = lam
        self.instant_weight = instant_weight
        self.iterations = iterations
        self.densify = densify
        self.max_gaussians = max_gaussians
        self.init_count = init_count
        self.init_opacity = init_opacity
        self.bbox = bbox
        self.background = background
        self.instant_source = instant_source
        self.tfp_window = tfp_window
        self.mapper = mapper
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(K=self.K, window=self.window, lam=self.lam, instant_weight=self.instant_weight,
                           iterations=self.iterations, densify=self.densify, max_gaussians=self.max_gaussians,
                           background=self.background, seed=self.random_state)

    def _instant_images(self, stream, centers) -> dict:
        if self.instant_source == "sim":
            mapper = self.mapper if self.mapper is not None else SpikeInstantMapper(random_state=self.random_state)
            if not hasattr(mapper, "params_"):
                mapper.fit(stream)
            self.mapper_ = mapper
            images = mapper.transform(stream, centers)
        elif self.instant_source == "tfp":
            images = tfp_many(stream, centers, self.tfp_window // 2)
        elif self.instant_source == "tfi":
            images = np.stack([tfi(stream, int(t)) for t in centers])
        else:
            raise ValueError(f"instant_source must be 'sim', 'tfp' or 'tfi', got {self.instant_source!r}")
        return dict(zip(np.asarray(centers).tolist(), images))

    def fit(self, X, y, centers=None, init_cloud: GaussianCloud | None = None):
        """Fit to spike stream ``X`` seen along trajectory ``y`` (one pose per readout)."""
        from .pipeline import random_init_cloud

        stream = check_stream(X)
        if not isinstance(y, CameraTrajectory):
            y = CameraTrajectory(list(y))
        cfg = self._config()
        if centers is None:
            centers = valid_centers(stream.num_readouts, len(y), cfg)
            if self.instant_source == "sim":
                h = (self.mapper.window if self.mapper is not None else SpikeInstantMapper().window) // 2
            else:
                h = self.tfp_window // 2 if self.instant_source == "tfp" else 0
            centers = centers[(centers >= h) & (centers < stream.num_readouts - h)]
        centers = np.asarray(centers, dtype=np.int64)
        if init_cloud is None:
            init_cloud = random_init_cloud(self.bbox, self.init_count, seed=self.random_state,
                                           opacity=self.init_opacity)
        targets = self._instant_images(stream, centers)
        result = train(stream, y, init_cloud, targets, cfg, centers=centers)
        self.cloud_ = result.cloud
        self.history_ = result.history
        self.fit_seconds_ = result.seconds
        return self

    def predict(self, X) -> np.ndarray:
        """Render one image per camera (a trajectory or any sequence of cameras)."""
        check_is_fitted(self, "cloud_")
        if isinstance(X, PinholeCamera):
            cams = [X]
        else:
            cams = X.cameras if isinstance(X, CameraTrajectory) else list(X)
        return render_views(self.cloud_, cams, self.background)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of renders at cameras ``X`` against images ``y``."""
        renders = self.predict(X)
        gts = [check_image(g, "y") for g in y]
        if len(gts) != len(renders):
            raise ValueError(f"{len(renders)} cameras but {len(gts)} reference images")
        return float(np.mean([psnr(r, g) for r, g in zip(renders, gts)]))
