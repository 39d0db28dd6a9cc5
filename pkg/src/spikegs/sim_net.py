"""Spike Instant Mapping (SIM): a tiny blind-spot network from spike windows to images.

Architecture, for an input window of ``T`` binary readouts:

1. The window (as ``T`` channels) is rotated by 0, 90, 180 and 270 degrees.
2. Each rotation passes through the same ``m`` shifted 3x3 convolutions.  A
   shifted convolution pads two rows on top (one for the shift, one for the
   kernel) and none at the bottom, so output row ``i`` only sees input rows
   ``i-2 .. i``.  After the last layer every feature map is shifted down by one
   more row, which leaves a ``(2m+1) x (2m+1)`` receptive field strictly above
   the output pixel.
3. The four branches are rotated back and concatenated; ``n`` 1x1 layers fuse
   them into one channel squashed by a logistic.

The union of the four half-plane fields never contains the center pixel, so the
output at a pixel is exactly independent of that pixel's own spikes.

Forward and backward passes are written out by hand over channels-last
``(batch, H, W, C)`` arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from ._validation import check_binary, check_random_state
from .optim import Adam
from .recon import tfp_many
from .spike_sim import SpikeStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimNetConfig:
    m: int = 3
    n: int = 3
    hidden: int = 32
    window: int = 33
    slope: float = 0.1

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m and n must be >= 1, got m={self.m}, n={self.n}")
        if self.hidden < 2:
            raise ValueError("hidden must be >= 2")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def conv_channels(self) -> list[int]:
        """Channel plan of the shifted 3x3 stack, input first."""
        return [self.window, self.hidden // 2] + [self.hidden] * (self.m - 1)

    @property
    def fuse_channels(self) -> list[int]:
        """Channel plan of the 1x1 stack, input (4 concatenated branches) first."""
        inner = [2 * self.hidden] + [self.hidden] * (self.n - 2)
        return [4 * self.conv_channels[-1]] + inner[: self.n - 1] + [1]

    @property
    def receptive_radius(self) -> int:
        return self.m


def param_count(cfg: SimNetConfig) -> int:
    """Closed-form number of learnable scalars."""
    cc, fc = cfg.conv_channels, cfg.fuse_channels
    conv = sum(9 * cin * cout + cout for cin, cout in zip(cc[:-1], cc[1:]))
    fuse = sum(cin * cout + cout for cin, cout in zip(fc[:-1], fc[1:]))
    return conv + fuse


@dataclass
class SimNetParams:
    """Conv kernels are (3, 3, C_in, C_out); 1x1 kernels are (C_in, C_out)."""

    conv_w: list
    conv_b: list
    fuse_w: list
    fuse_b: list

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out += [w, b]
        for w, b in zip(self.fuse_w, self.fuse_b):
            out += [w, b]
        return out

    def as_dict(self) -> dict:
        return {f"p{i}": a for i, a in enumerate(self.arrays())}

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, cfg: SimNetConfig, flat, dtype=np.float32) -> "SimNetParams":
        flat = np.asarray(flat)
        if flat.size != param_count(cfg):
            raise ValueError(f"expected {param_count(cfg)} values, got {flat.size}")
        shapes = _shapes(cfg)
        arrays, pos = [], 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(flat[pos:pos + size].reshape(shape).astype(dtype))
            pos += size
        return cls._from_arrays(cfg, arrays)

    @classmethod
    def _from_arrays(cls, cfg, arrays):
        k = 2 * cfg.m
        return cls(arrays[0:k:2], arrays[1:k:2], arrays[k::2], arrays[k + 1::2])

    def astype(self, dtype) -> "SimNetParams":
        return SimNetParams([w.astype(dtype) for w in self.conv_w], [b.astype(dtype) for b in self.conv_b],
                            [w.astype(dtype) for w in self.fuse_w], [b.astype(dtype) for b in self.fuse_b])

    def copy(self) -> "SimNetParams":
        return self.astype(self.conv_w[0].dtype)

    def __eq__(self, other):
        if not isinstance(other, SimNetParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.dtype == y.dtype and np.array_equal(x, y) for x, y in zip(a, b))


def _shapes(cfg: SimNetConfig) -> list[tuple]:
    shapes = []
    cc, fc = cfg.conv_channels, cfg.fuse_channels
    for cin, cout in zip(cc[:-1], cc[1:]):
        shapes += [(3, 3, cin, cout), (cout,)]
    for cin, cout in zip(fc[:-1], fc[1:]):
        shapes += [(cin, cout), (cout,)]
    return shapes


def init_params(cfg: SimNetConfig, seed=0, dtype=np.float32) -> SimNetParams:
    """He-style initialization for leaky rectifiers, zero biases."""
    rng = check_random_state(seed)
    gain = 2.0 / (1.0 + cfg.slope ** 2)
    arrays = []
    for shape in _shapes(cfg):
        if len(shape) == 1:
            arrays.append(np.zeros(shape, dtype=dtype))
        else:
            fan_in = int(np.prod(shape[:-1]))
            arrays.append((rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype))
    return SimNetParams._from_arrays(cfg, arrays)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _leaky(z, slope):
    return np.maximum(z, slope * z)


def _leaky_backward(d, z, slope):
    return np.where(z > 0, d, d * np.asarray(slope, dtype=d.dtype))


def _dense(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` over the last axis as one 2D product (a single BLAS call)."""
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


@numba.njit(cache=True)
def _im2col_shifted(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, H, W, 9C) columns for the upward-shifted 3x3 conv.

    Equivalent to padding two rows on top and one column on each side, then
    taking the 3x3 patch whose bottom-center tap sits on the pixel.
    """
    B, H, W, C = x.shape
    cols = np.zeros((B, H, W, 9 * C), dtype=x.dtype)
    for b in range(B):
        for y in range(H):
            for dy in range(3):
                yy = y + dy - 2
                if yy < 0:
                    continue
                for xo in range(W):
                    for dx in range(3):
                        xx = xo + dx - 1
                        if xx < 0 or xx >= W:
                            continue
                        base = (dy * 3 + dx) * C
                        for c in range(C):
                            cols[b, y, xo, base + c] = x[b, yy, xx, c]
    return cols


@numba.njit(cache=True)
def _col2im_shifted(dcols: np.ndarray, C: int) -> np.ndarray:
    """Adjoint of :func:`_im2col_shifted`."""
    B, H, W = dcols.shape[:3]
    dx_out = np.zeros((B, H, W, C), dtype=dcols.dtype)
    for b in range(B):
        for y in range(H):
            for dy in range(3):
                yy = y + dy - 2
                if yy < 0:
                    continue
                for xo in range(W):
                    for dx in range(3):
                        xx = xo + dx - 1
                        if xx < 0 or xx >= W:
                            continue
                        base = (dy * 3 + dx) * C
                        for c in range(C):
                            dx_out[b, yy, xx, c] += dcols[b, y, xo, base + c]
    return dx_out


def _shift_down(x):
    out = np.zeros_like(x)
    out[:, 1:] = x[:, :-1]
    return out


def _shift_down_backward(d):
    out = np.zeros_like(d)
    out[:, :-1] = d[:, 1:]
    return out


def _as_batch(windows, cfg: SimNetConfig, dtype) -> np.ndarray:
    """(T, H, W) or (B, T, H, W) binary windows -> (B, H, W, T)."""
    w = np.asarray(windows)
    if w.ndim == 3:
        w = w[None]
    if w.ndim != 4 or w.shape[1] != cfg.window:
        raise ValueError(f"expected windows of shape (B, {cfg.window}, H, W), got {np.shape(windows)}")
    check_binary(w)
    return np.ascontiguousarray(np.transpose(w, (0, 2, 3, 1)), dtype=dtype)


def _rotation_groups(x):
    """Rotated copies of ``x`` grouped so equal shapes share one conv pass.

    Returns a list of ``(rotations, stacked_input)``.
    """
    B = x.shape[0]
    rots = [np.rot90(x, r, axes=(1, 2)) for r in range(4)]
    if x.shape[1] == x.shape[2]:
        return [((0, 1, 2, 3), np.concatenate(rots, axis=0))], B
    return [((0, 2), np.concatenate([rots[0], rots[2]])), ((1, 3), np.concatenate([rots[1], rots[3]]))], B


def _forward(params: SimNetParams, cfg: SimNetConfig, x: np.ndarray):
    slope = cfg.slope
    groups, B = _rotation_groups(x)
    caches, feats = [], [None] * 4
    for rots, h in groups:
        cache = []
        for w, b in zip(params.conv_w, params.conv_b):
            cols = _im2col_shifted(h)
            z = _dense(cols, w.reshape(-1, w.shape[-1])) + b
            cache.append((cols, z))
            h = _leaky(z, slope)
        h = _shift_down(h)
        for j, r in enumerate(rots):
            feats[r] = np.rot90(h[j * B:(j + 1) * B], -r, axes=(1, 2))
        caches.append(cache)
    feat = np.concatenate(feats, axis=-1)
    fuse_cache = []
    h = feat
    for i, (w, b) in enumerate(zip(params.fuse_w, params.fuse_b)):
        z = _dense(h, w) + b
        fuse_cache.append((h, z))
        h = _leaky(z, slope) if i < cfg.n - 1 else z
    pre = h[..., 0]
    out = 1.0 / (1.0 + np.exp(-pre))
    return out, pre, ([g[0] for g in groups], caches, fuse_cache)


def sim_forward(params: SimNetParams, cfg: SimNetConfig, window, return_pre: bool = False):
    """Map a spike window (T, H, W) to an image (H, W) in (0, 1).

    A leading batch axis (B, T, H, W) is also accepted and kept in the output.
    """
    batched = np.ndim(window) == 4
    dtype = params.conv_w[0].dtype
    out, pre, _ = _forward(params, cfg, _as_batch(window, cfg, dtype))
    if not batched:
        out, pre = out[0], pre[0]
    return (out, pre) if return_pre else out


def _l1(out, target):
    diff = out - target
    return float(np.mean(np.abs(diff), dtype=np.float64)), np.sign(diff) / diff.size


def sim_loss(params: SimNetParams, cfg: SimNetConfig, window, target=None) -> float:
    """Mean absolute difference between the network output and the window's TFP image."""
    windows = np.asarray(window)
    if target is None:
        target = windows.mean(axis=-3, dtype=np.float64)
    out = sim_forward(params, cfg, windows)
    return _l1(out.astype(np.float64), target)[0]


def _backward(params, cfg, out, caches, d_out):
    slope = cfg.slope
    group_rots, conv_caches, fuse_cache = caches
    dz = (d_out * out * (1.0 - out))[..., None].astype(out.dtype)
    g_fuse_w, g_fuse_b = [None] * cfg.n, [None] * cfg.n
    for i in reversed(range(cfg.n)):
        h, z = fuse_cache[i]
        if i < cfg.n - 1:
            dz = _leaky_backward(dz, z, slope)
        w = params.fuse_w[i]
        g_fuse_w[i] = h.reshape(-1, h.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        g_fuse_b[i] = dz.sum(axis=(0, 1, 2))
        dz = _dense(dz, w.T)
    d_feat = dz

    c_last = cfg.conv_channels[-1]
    g_conv_w = [np.zeros_like(w) for w in params.conv_w]
    g_conv_b = [np.zeros_like(b) for b in params.conv_b]
    for rots, cache in zip(group_rots, conv_caches):
        d = np.concatenate([np.rot90(d_feat[..., r * c_last:(r + 1) * c_last], r, axes=(1, 2))
                            for r in rots])
        d = _shift_down_backward(d)
        for layer in reversed(range(cfg.m)):
            cols, z = cache[layer]
            dz = _leaky_backward(d, z, slope)
            w = params.conv_w[layer]
            g_conv_w[layer] += (cols.reshape(-1, cols.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])).reshape(w.shape)
            g_conv_b[layer] += dz.sum(axis=(0, 1, 2))
            if layer > 0:
                d = _col2im_shifted(_dense(dz, w.reshape(-1, w.shape[-1]).T), w.shape[2])
    return SimNetParams(g_conv_w, g_conv_b, g_fuse_w, g_fuse_b)


def sim_backward(params: SimNetParams, cfg: SimNetConfig, window, target=None):
    """Exact gradients of :func:`sim_loss` with respect to every weight and bias.

    The L1 subgradient is taken as 0 where the residual is exactly 0.

    Returns:
        ``(loss, grads)`` where ``grads`` has the same structure as ``params``.
    """
    dtype = params.conv_w[0].dtype
    x = _as_batch(window, cfg, dtype)
    if target is None:
        target = x.mean(axis=-1, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(x.shape[:3])
    out, _, caches = _forward(params, cfg, x)
    loss, d_out = _l1(out.astype(np.float64), target)
    return loss, _backward(params, cfg, out, caches, d_out.astype(dtype))


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------


@dataclass
class SimSchedule:
    """Self-supervised training schedule for one scene."""

    steps: int = 5000
    lr: float = 1e-3
    lr_final: float | None = 1e-4
    batch_size: int = 1
    crop: int = 64
    seed: int = 0
    holdout: int = 8

    def lr_at(self, step: int) -> float:
        """Rate for a 0-based step; log-linear decay to ``lr_final`` when set."""
        if self.lr_final is None or self.steps <= 1:
            return self.lr
        frac = min(step / (self.steps - 1), 1.0)
        return float(np.exp((1 - frac) * np.log(self.lr) + frac * np.log(self.lr_final)))


@dataclass
class TrainStateSIM:
    optimizer: Adam
    step: int = 0
    history: list = field(default_factory=list)


def _valid_centers(stream: SpikeStream, cfg: SimNetConfig) -> np.ndarray:
    h = cfg.window // 2
    centers = np.arange(h, stream.num_readouts - h)
    if centers.size == 0:
        raise ValueError(f"stream of {stream.num_readouts} readouts is shorter than the "
                         f"{cfg.window}-readout SIM window")
    return centers


def extract_windows(stream: SpikeStream, centers, length: int) -> np.ndarray:
    """Full-frame windows (len(centers), length, H, W) centered on each readout."""
    h = length // 2
    centers = np.asarray(centers, dtype=np.int64)
    if centers.min() < h or centers.max() + h >= stream.num_readouts:
        raise ValueError("window extends beyond the stream")
    idx = centers[:, None] + np.arange(-h, h + 1)[None, :]
    return stream.bits[idx]


def _sample_batch(stream, cfg, centers, schedule, rng):
    H, W = stream.height, stream.width
    ch, cw = min(schedule.crop, H), min(schedule.crop, W)
    h = cfg.window // 2
    batch = np.empty((schedule.batch_size, cfg.window, ch, cw), dtype=np.uint8)
    for i in range(schedule.batch_size):
        c = int(rng.choice(centers))
        y = int(rng.integers(0, H - ch + 1))
        x = int(rng.integers(0, W - cw + 1))
        batch[i] = stream.bits[c - h:c + h + 1, y:y + ch, x:x + cw]
    return batch


def sim_train(stream: SpikeStream, cfg: SimNetConfig = SimNetConfig(),
              schedule: SimSchedule = SimSchedule(), init: SimNetParams | None = None,
              callback=None):
    """Fit SIM to one scene's spike stream against its own TFP images.

    Returns:
        ``(params, state)``; ``state.history`` holds ``(step, batch_loss)`` and
        the held-out losses before and after training are logged.
    """
    rng = np.random.default_rng(schedule.seed)
    params = init.copy() if init is not None else init_params(cfg, rng)
    centers = _valid_centers(stream, cfg)
    hold_rng = np.random.default_rng([schedule.seed, 1])
    holdout = _sample_batch(stream, cfg, centers,
                            SimSchedule(batch_size=schedule.holdout, crop=schedule.crop), hold_rng)
    loss0 = sim_loss(params, cfg, holdout)

    named = params.as_dict()
    state = TrainStateSIM(Adam(named, lr=schedule.lr))
    for step in range(schedule.steps):
        batch = _sample_batch(stream, cfg, centers, schedule, rng)
        loss, grads = sim_backward(params, cfg, batch)
        for name in named:
            state.optimizer.set_lr(name, schedule.lr_at(step))
        state.optimizer.step(grads.as_dict())
        state.step += 1
        state.history.append((state.step, loss))
        if callback is not None:
            callback(state.step, loss)
    if schedule.steps:
        logger.info("SIM held-out L1 %.5f -> %.5f after %d steps", loss0,
                    sim_loss(params, cfg, holdout), schedule.steps)
    return params, state


def sim_predict(params: SimNetParams, cfg: SimNetConfig, stream: SpikeStream, centers,
                batch_size: int = 8) -> np.ndarray:
    """SIM images (len(centers), H, W) in float64 for full-window centers."""
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    out = np.empty((centers.size, stream.height, stream.width))
    for i in range(0, centers.size, batch_size):
        chunk = centers[i:i + batch_size]
        out[i:i + chunk.size] = sim_forward(params, cfg, extract_windows(stream, chunk, cfg.window))
    return out


def tfp_target(stream: SpikeStream, centers, cfg: SimNetConfig) -> np.ndarray:
    """The noisy self-supervision target for each window."""
    return tfp_many(stream, centers, cfg.window // 2)
