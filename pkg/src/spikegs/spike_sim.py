"""Integrate-and-fire spike camera simulator.

Each pixel integrates ``sigma * I`` charge per readout.  When the accumulated
voltage reaches ``threshold`` a spike is read out and the voltage wraps modulo
the threshold.  At most one spike is emitted per readout, so any intensity above
``threshold / sigma`` saturates at one spike per readout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_frames, check_positive, check_random_state


@dataclass(frozen=True)
class SpikeCamParams:
    """Sensor constants.

    ``photon_scale`` and ``dark_rate`` only matter in Poisson mode.  Their
    defaults are implementer choices for desk-scale experiments.
    """

    threshold: float = 1.0
    sigma: float = 1.0
    tau_us: float = 25.0
    photon_scale: float = 50.0
    dark_rate: float = 0.0

    def __post_init__(self):
        check_positive(self.threshold, "threshold")
        check_positive(self.sigma, "sigma")
        check_positive(self.tau_us, "tau_us")
        check_positive(self.photon_scale, "photon_scale")
        if not np.isfinite(self.dark_rate) or self.dark_rate < 0:
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")

    @property
    def tau_ns(self) -> int:
        return int(round(self.tau_us * 1000))


@dataclass
class SpikeStream:
    """Binary readouts ``bits[k, y, x]`` sampled every ``tau_ns`` nanoseconds."""

    bits: np.ndarray
    tau_ns: int = 25_000

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 3:
            raise ValueError(f"bits must have shape (num_readouts, H, W), got {bits.shape}")
        if bits.dtype != np.uint8:
            if bits.size and not np.all((bits == 0) | (bits == 1)):
                raise ValueError("spike bits must be 0 or 1")
            bits = bits.astype(np.uint8)
        self.bits = bits
        self.tau_ns = int(self.tau_ns)

    @property
    def num_readouts(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    @property
    def tau_us(self) -> float:
        return self.tau_ns / 1000.0

    def __eq__(self, other):
        if not isinstance(other, SpikeStream):
            return NotImplemented
        return self.tau_ns == other.tau_ns and np.array_equal(self.bits, other.bits)


def initial_voltage(shape, params: SpikeCamParams, seed=0) -> np.ndarray:
    """Per-pixel residual voltage drawn uniformly from ``[0, threshold)``."""
    rng = check_random_state(seed)
    return rng.uniform(0.0, params.threshold, size=shape)


def _check_state(initial, shape, params):
    v = np.asarray(initial, dtype=np.float64)
    if v.shape != shape:
        raise ValueError(f"initial state shape {v.shape} does not match frame shape {shape}")
    if np.any(v < 0) or np.any(v >= params.threshold):
        raise ValueError("initial voltage must lie in [0, threshold)")
    return v.copy()


def _integrate(charges, v, threshold):
    """Run the integrate-and-fire loop over per-readout charge increments."""
    bits = np.zeros(charges.shape, dtype=np.uint8)
    for k in range(charges.shape[0]):
        v += charges[k]
        fired = v >= threshold
        bits[k] = fired
        v[fired] = np.mod(v[fired], threshold)
        # np.mod can round up to the divisor for values just above a multiple
        v[v >= threshold] = 0.0
    return bits, v


def simulate_ideal(frames, params: SpikeCamParams = SpikeCamParams(), initial=None, seed=0,
                   return_state: bool = False):
    """Deterministic integrate-and-fire simulation.

    Args:
        frames: intensity sequence (K, H, W) with values in [0, 1], one frame
            per readout interval.
        params: sensor constants.
        initial: residual voltage (H, W) in [0, threshold).  ``None`` draws it
            uniformly at random from ``seed``.
        seed: only used when ``initial`` is None.
        return_state: also return the final residual voltage.

    Returns:
        SpikeStream, or ``(SpikeStream, voltage)`` when ``return_state``.
    """
    frames = check_frames(frames)
    shape = frames.shape[1:]
    if initial is None:
        v = initial_voltage(shape, params, seed)
    else:
        v = _check_state(initial, shape, params)
    bits, v = _integrate(params.sigma * frames, v, params.threshold)
    stream = SpikeStream(bits, params.tau_ns)
    return (stream, v) if return_state else stream


def simulate_poisson(frames, params: SpikeCamParams = SpikeCamParams(), seed=0, initial=None,
                     return_state: bool = False):
    """Integrate-and-fire simulation with Poisson photon and dark-current noise.

    The charge collected during one readout is
    ``sigma / photon_scale * Poisson(photon_scale * (I + dark_rate / sigma))``,
    whose mean ``sigma * I + dark_rate`` matches the ideal simulator when the
    dark current is zero.
    """
    frames = check_frames(frames)
    shape = frames.shape[1:]
    rng = check_random_state(seed)
    if initial is None:
        v = initial_voltage(shape, params, rng)
    else:
        v = _check_state(initial, shape, params)
    lam = params.photon_scale * (frames + params.dark_rate / params.sigma)
    charges = rng.poisson(lam).astype(np.float64) * (params.sigma / params.photon_scale)
    bits, v = _integrate(charges, v, params.threshold)
    stream = SpikeStream(bits, params.tau_ns)
    return (stream, v) if return_state else stream


def firing_rate(stream: SpikeStream) -> np.ndarray:
    """Per-pixel spikes per readout over the whole stream."""
    return stream.bits.mean(axis=0, dtype=np.float64)


def expected_rate(intensity, params: SpikeCamParams) -> np.ndarray:
    """Long-run ideal firing rate, capped at one spike per readout."""
    return np.minimum(params.sigma * np.asarray(intensity, dtype=np.float64) / params.threshold, 1.0)
