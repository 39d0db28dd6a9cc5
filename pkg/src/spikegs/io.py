"""File formats: spike streams, images, trajectories, Gaussian clouds and SIM weights.

Binary layouts are little-endian.  Text formats write floats with ``repr`` so
every value survives a write/read cycle unchanged.

=========  ==================================================================
``.spk``   ``b"SPK1"``, u32 width, height, num_readouts, tau_ns, then one
           ``ceil(W*H/8)``-byte frame per readout, row-major, MSB first.
``.imgf``  ``b"IMGF"``, u32 width, height, then W*H float32 values.
``.pgm``   binary 8-bit portable graymap (display only, lossy).
``.trj``   header ``TRJ1 <count> [<width> <height> [<near>]]`` then
           ``k tx ty tz qw qx qy qz fx fy cx cy`` per pose (world-to-camera).
``.gsc``   header ``GSC1 <count>`` then ``px py pz sx sy sz qw qx qy qz
           opacity_logit intensity_logit`` per Gaussian (raw parameters).
``.sim``   ``b"SIM1"``, u32 count, count float32 values, plus a ``.cfg``
           key=value sidecar with the network layout.
``.csv``   training loss history ``iter,instant,exposure,total``.
=========  ==================================================================
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .scenegen import CameraTrajectory
from .sim_net import SimNetConfig, SimNetParams, param_count
from .spike_sim import SpikeStream
from .splat import GaussianCloud, PinholeCamera

SPK_MAGIC = b"SPK1"
IMG_MAGIC = b"IMGF"
SIM_MAGIC = b"SIM1"
TRJ_MAGIC = "TRJ1"
GSC_MAGIC = "GSC1"

# The public real-world captures are 250x400 pixels.  Their container layout is
# not documented, so no reader exists; convert them to .spk externally.
REAL_CAPTURE_SHAPE = (250, 400)


class FormatError(ValueError):
    """A file does not match the layout its magic string promises."""


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _check_magic(path, data: bytes, magic: bytes, header_size: int) -> None:
    if data[:len(magic)] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {data[:len(magic)]!r}")
    if len(data) < header_size:
        raise FormatError(f"{path}: truncated header ({len(data)} of {header_size} bytes)")


# ---------------------------------------------------------------------------
# Spike streams
# ---------------------------------------------------------------------------


def write_spk(path, stream: SpikeStream) -> None:
    n, H, W = stream.bits.shape
    payload = np.packbits(stream.bits.reshape(n, H * W), axis=1, bitorder="big")
    with open(path, "wb") as f:
        f.write(SPK_MAGIC + struct.pack("<IIII", W, H, n, stream.tau_ns))
        f.write(payload.tobytes())


def read_spk(path) -> SpikeStream:
    data = _read_bytes(path)
    _check_magic(path, data, SPK_MAGIC, 20)
    W, H, n, tau_ns = struct.unpack_from("<IIII", data, 4)
    frame_bytes = (W * H + 7) // 8
    expected = n * frame_bytes
    payload = np.frombuffer(data, dtype=np.uint8, offset=20)
    if payload.size != expected:
        raise FormatError(f"{path}: payload is {payload.size} bytes, expected {expected} "
                          f"for {n} readouts of {W}x{H}")
    packed = payload.reshape(n, frame_bytes)
    bits = np.unpackbits(packed, axis=1, bitorder="big")
    if np.any(bits[:, W * H:]):
        raise FormatError(f"{path}: nonzero padding bits after the last pixel of a readout")
    return SpikeStream(np.ascontiguousarray(bits[:, :W * H].reshape(n, H, W)), tau_ns)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def write_image(path, image: np.ndarray) -> None:
    """Write a grayscale image; ``.pgm`` gives 8-bit display output, anything else IMGF."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    H, W = image.shape
    if str(path).lower().endswith(".pgm"):
        data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
            f.write(data.tobytes())
        return
    with open(path, "wb") as f:
        f.write(IMG_MAGIC + struct.pack("<II", W, H))
        f.write(image.astype("<f4").tobytes())


def _read_pgm(path, data: bytes) -> np.ndarray:
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(int(data[pos:end]))
        pos = end
    W, H, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos + 1)
    if pixels.size != W * H:
        raise FormatError(f"{path}: PGM payload is {pixels.size} bytes, expected {W * H}")
    return pixels.reshape(H, W).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Read IMGF (returned as float32) or 8-bit PGM (returned as float64 in [0, 1])."""
    data = _read_bytes(path)
    if data[:2] == b"P5":
        return _read_pgm(path, data)
    _check_magic(path, data, IMG_MAGIC, 12)
    W, H = struct.unpack_from("<II", data, 4)
    if len(data) - 12 != 4 * W * H:
        raise FormatError(f"{path}: payload is {len(data) - 12} bytes, expected {4 * W * H}")
    values = np.frombuffer(data, dtype="<f4", offset=12)
    image = values.reshape(H, W).astype(np.float32)
    if not np.all(np.isfinite(image)):
        raise FormatError(f"{path}: image contains non-finite values")
    return image


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def _text_lines(path, magic: str):
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split()[0] != magic:
        found = lines[0].split()[0] if lines else "<empty file>"
        raise FormatError(f"{path}: expected header {magic!r}, found {found!r}")
    head = lines[0].split()
    try:
        count = int(head[1])
    except (IndexError, ValueError):
        raise FormatError(f"{path}: header must be '{magic} <count>'") from None
    if len(lines) - 1 != count:
        raise FormatError(f"{path}: header promises {count} records, file has {len(lines) - 1}")
    return head, lines[1:]


def _parse_row(path, line: str, n_fields: int, lineno: int) -> list:
    parts = line.split()
    if len(parts) != n_fields:
        raise FormatError(f"{path}: record {lineno} has {len(parts)} fields, expected {n_fields}")
    try:
        return [float(p) for p in parts]
    except ValueError as err:
        raise FormatError(f"{path}: record {lineno}: {err}") from None


def write_trajectory(path, trajectory: CameraTrajectory) -> None:
    cams = trajectory.cameras
    first = cams[0]
    if any((c.width, c.height, c.near) != (first.width, first.height, first.near) for c in cams):
        raise ValueError("all poses of a trajectory file must share image size and near plane")
    lines = [f"{TRJ_MAGIC} {len(cams)} {first.width} {first.height} {_fmt(first.near)}"]
    for k, cam in zip(trajectory.timestamps, cams):
        vals = list(cam.t) + list(cam.quat) + [cam.fx, cam.fy, cam.cx, cam.cy]
        lines.append(" ".join([_fmt_time(k)] + [_fmt(v) for v in vals]))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def read_trajectory(path, width: int | None = None, height: int | None = None) -> CameraTrajectory:
    """Read a TRJ1 file.  Image size comes from the header, or from the arguments if absent."""
    head, rows = _text_lines(path, TRJ_MAGIC)
    if len(head) >= 4:
        width, height = int(head[2]), int(head[3])
    if width is None or height is None:
        raise FormatError(f"{path}: header has no image size; pass width and height")
    near = float(head[4]) if len(head) >= 5 else 0.01
    times, cams = [], []
    for i, line in enumerate(rows, 1):
        k, tx, ty, tz, qw, qx, qy, qz, fx, fy, cx, cy = _parse_row(path, line, 12, i)
        times.append(k)
        cams.append(PinholeCamera.from_quat([qw, qx, qy, qz], [tx, ty, tz], fx=fx, fy=fy, cx=cx, cy=cy,
                                            width=width, height=height, near=near))
    return CameraTrajectory(cams, times)


def write_cloud(path, cloud: GaussianCloud) -> None:
    table = np.column_stack([cloud.positions, cloud.log_scales, cloud.quats, cloud.opacity_logits,
                             cloud.intensity_logits])
    lines = [f"{GSC_MAGIC} {len(cloud)}"] + [" ".join(_fmt(v) for v in row) for row in table]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def read_cloud(path) -> GaussianCloud:
    _, rows = _text_lines(path, GSC_MAGIC)
    table = np.array([_parse_row(path, line, 12, i) for i, line in enumerate(rows, 1)],
                     dtype=np.float64).reshape(-1, 12)
    return GaussianCloud(table[:, 0:3].copy(), table[:, 3:6].copy(), table[:, 6:10].copy(),
                         table[:, 10].copy(), table[:, 11].copy())


# ---------------------------------------------------------------------------
# SIM weights
# ---------------------------------------------------------------------------

_SIM_KEYS = ("m", "n", "hidden", "window", "slope")


def sim_config_path(path) -> str:
    return os.fspath(path) + ".cfg"


def write_sim_params(path, params: SimNetParams, cfg: SimNetConfig) -> None:
    flat = params.flatten().astype("<f4")
    if flat.size != param_count(cfg):
        raise ValueError(f"{flat.size} weights do not match the {param_count(cfg)} the config needs")
    with open(path, "wb") as f:
        f.write(SIM_MAGIC + struct.pack("<I", flat.size))
        f.write(flat.tobytes())
    with open(sim_config_path(path), "w", encoding="ascii") as f:
        f.write("".join(f"{k}={getattr(cfg, k)}\n" for k in _SIM_KEYS))


def read_sim_params(path) -> tuple[SimNetParams, SimNetConfig]:
    from .config import parse_config

    data = _read_bytes(path)
    _check_magic(path, data, SIM_MAGIC, 8)
    (count,) = struct.unpack_from("<I", data, 4)
    if len(data) - 8 != 4 * count:
        raise FormatError(f"{path}: payload is {len(data) - 8} bytes, expected {4 * count}")
    cfg_path = sim_config_path(path)
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"missing SIM config sidecar: {cfg_path}")
    cfg = SimNetConfig(**parse_config(cfg_path, SimNetConfig))
    if count != param_count(cfg):
        raise FormatError(f"{path}: {count} weights, but {cfg_path} describes {param_count(cfg)}")
    flat = np.frombuffer(data, dtype="<f4", offset=8)
    return SimNetParams.from_flat(cfg, flat, dtype=np.float32), cfg


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


def _config_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return _fmt(v)
    return "none" if v is None else str(v)


def write_run_config(path, values: dict) -> None:
    """Settings of a run as key=value lines, readable by :func:`spikegs.config.parse_config`."""
    with open(path, "w", encoding="ascii") as f:
        f.write("".join(f"{k} = {_config_value(v)}\n" for k, v in sorted(values.items())))


def write_loss_history(path, history) -> None:
    """LossReport rows as CSV; skipped terms are written as ``nan``."""
    with open(path, "w", encoding="ascii") as f:
        f.write("iter,instant,exposure,total\n")
        for r in history:
            f.write(f"{r.iteration},{_fmt(r.instant)},{_fmt(r.exposure)},{_fmt(r.total)}\n")


def read_loss_history(path) -> np.ndarray:
    """(n, 4) array of ``iter, instant, exposure, total``."""
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != "iter,instant,exposure,total":
            raise FormatError(f"{path}: unexpected header {header!r}")
        rows = [[float(v) for v in line.split(",")] for line in f if line.strip()]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)
