"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numpy as np


def check_frames(frames, name: str = "frames") -> np.ndarray:
    """Validate an intensity sequence and return it as a float64 array (K, H, W)."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (K, H, W), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name} must be nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} and {names[1]} differ in shape: {a.shape} vs {b.shape}")


def check_binary(window, name: str = "window") -> np.ndarray:
    arr = np.asarray(window)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary (0/1)")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int or an existing Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_stream(stream, name: str = "stream"):
    """Accept a SpikeStream or a binary (num_readouts, H, W) array."""
    from .spike_sim import SpikeStream

    if isinstance(stream, SpikeStream):
        return stream
    arr = check_binary(stream, name)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (num_readouts, H, W), got {arr.shape}")
    return SpikeStream(arr.astype(np.uint8))
