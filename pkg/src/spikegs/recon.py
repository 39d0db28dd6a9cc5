"""Closed-form spike-to-image reconstructions (TFP, TFI)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spike_sim import SpikeStream


@dataclass(frozen=True)
class ReconWindow:
    """Readouts ``center - half_width .. center + half_width`` (inclusive)."""

    center: int
    half_width: int = 16

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")

    @classmethod
    def of_length(cls, center: int, length: int) -> "ReconWindow":
        if length < 1 or length % 2 == 0:
            raise ValueError(f"window length must be a positive odd integer, got {length}")
        return cls(int(center), (length - 1) // 2)

    @property
    def length(self) -> int:
        return 2 * self.half_width + 1

    def bounds(self, num_readouts: int) -> tuple[int, int]:
        """Clipped ``[start, stop)`` readout range inside a stream."""
        if not 0 <= self.center < num_readouts:
            raise ValueError(
                f"window center {self.center} outside stream of {num_readouts} readouts")
        return max(0, self.center - self.half_width), min(num_readouts, self.center + self.half_width + 1)


def tfp(stream: SpikeStream, window: ReconWindow) -> np.ndarray:
    """Texture from playback: spike count in the window over its (clipped) length."""
    start, stop = window.bounds(stream.num_readouts)
    counts = stream.bits[start:stop].sum(axis=0, dtype=np.int64)
    return counts / float(stop - start)


def exposure_target(stream: SpikeStream, window: ReconWindow) -> np.ndarray:
    """Windowed firing rate used as the target of the exposure-like loss."""
    return tfp(stream, window)


def tfp_many(stream: SpikeStream, centers, half_width: int) -> np.ndarray:
    """TFP images for several window centers at once, shape (len(centers), H, W).

    Bitwise identical to calling :func:`tfp` per center.
    """
    centers = np.asarray(centers, dtype=np.int64)
    n = stream.num_readouts
    if centers.size and (centers.min() < 0 or centers.max() >= n):
        raise ValueError(f"window centers must lie in [0, {n})")
    csum = np.zeros((n + 1,) + stream.bits.shape[1:], dtype=np.int64)
    np.cumsum(stream.bits, axis=0, dtype=np.int64, out=csum[1:])
    start = np.maximum(centers - half_width, 0)
    stop = np.minimum(centers + half_width + 1, n)
    counts = csum[stop] - csum[start]
    return counts / (stop - start).astype(np.float64)[:, None, None]


def tfi(stream: SpikeStream, t: int, threshold: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Texture from inter-spike interval at readout ``t``.

    Uses the gap between the last spike at or before ``t`` and the first spike
    after it.  Without a following spike the two most recent spikes are used,
    without a preceding one the first two after ``t``.  Pixels with fewer than
    two spikes in the whole stream fall back to the whole-stream TFP value.
    """
    bits = stream.bits
    n = stream.num_readouts
    if not 0 <= t < n:
        raise ValueError(f"t={t} outside stream of {n} readouts")

    before = bits[: t + 1][::-1]
    after = bits[t + 1:]
    cum_before = np.cumsum(before, axis=0, dtype=np.int64)
    n_before = cum_before[-1]
    if after.shape[0]:
        cum_after = np.cumsum(after, axis=0, dtype=np.int64)
        n_after = cum_after[-1]
    else:
        cum_after = np.zeros((1,) + bits.shape[1:], dtype=np.int64)
        n_after = cum_after[0]

    # readout index of the j-th spike counted backwards from t / forwards from t+1
    prev1 = t - np.argmax(cum_before >= 1, axis=0)
    prev2 = t - np.argmax(cum_before >= 2, axis=0)
    next1 = t + 1 + np.argmax(cum_after >= 1, axis=0)
    next2 = t + 1 + np.argmax(cum_after >= 2, axis=0)

    gap = np.where(
        (n_before >= 1) & (n_after >= 1), next1 - prev1,
        np.where(n_after == 0, prev1 - prev2, next2 - next1),
    ).astype(np.float64)

    total = n_before + n_after
    ok = total >= 2
    gap[~ok] = 1.0
    out = np.clip(threshold / (sigma * gap), 0.0, 1.0)
    fallback = bits.sum(axis=0, dtype=np.int64) / float(n)
    return np.where(ok, out, fallback)
