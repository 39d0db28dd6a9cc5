import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikegs import io
from spikegs.scenegen import CameraTrajectory
from spikegs.sim_net import SimNetConfig, init_params
from spikegs.spike_sim import SpikeStream
from spikegs.splat import GaussianCloud, PinholeCamera

FUZZ = settings(max_examples=1000, deadline=None)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


# --- spike streams -------------------------------------------------------------


def test_msb_first_packing(tmp_path):
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1], np.uint8).reshape(1, 1, 8)
    path = tmp_path / "a.spk"
    io.write_spk(path, SpikeStream(bits, 25_000))
    data = path.read_bytes()
    assert data[:4] == b"SPK1"
    assert data[20:] == bytes([0xB1])


def test_truncated_spk_rejected(tmp_path):
    path = tmp_path / "a.spk"
    io.write_spk(path, SpikeStream(np.ones((3, 4, 5), np.uint8)))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(io.FormatError, match="payload"):
        io.read_spk(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "a.spk"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(io.FormatError, match="magic"):
        io.read_spk(path)


def test_nonzero_padding_rejected(tmp_path):
    path = tmp_path / "a.spk"
    io.write_spk(path, SpikeStream(np.zeros((1, 1, 3), np.uint8)))
    data = bytearray(path.read_bytes())
    data[-1] = 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(io.FormatError, match="padding"):
        io.read_spk(path)


@FUZZ
@given(n=st.integers(0, 6), h=st.integers(1, 9), w=st.integers(1, 9), tau=st.integers(0, 2 ** 32 - 1),
       seed=st.integers(0, 2 ** 32 - 1))
def test_spk_fuzz_round_trip(tmp_path_factory, n, h, w, tau, seed):
    bits = (np.random.default_rng(seed).random((n, h, w)) < 0.5).astype(np.uint8)
    path = tmp_path_factory.mktemp("spk") / "s.spk"
    io.write_spk(path, SpikeStream(bits, tau))
    back = io.read_spk(path)
    assert back.tau_ns == tau and back.bits.shape == bits.shape and np.array_equal(back.bits, bits)
    assert os.path.getsize(path) == 20 + n * ((h * w + 7) // 8)


# --- images --------------------------------------------------------------------


@FUZZ
@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2 ** 32 - 1),
       scale=st.floats(1e-30, 1e30))
def test_imgf_fuzz_round_trip(tmp_path_factory, h, w, seed, scale):
    img = (np.random.default_rng(seed).standard_normal((h, w)) * scale).astype(np.float32)
    path = tmp_path_factory.mktemp("img") / "i.imgf"
    io.write_image(path, img)
    back = io.read_image(path)
    assert back.dtype == np.float32 and back.tobytes() == img.tobytes()


def test_imgf_rejects_nonfinite(tmp_path):
    with pytest.raises(ValueError):
        io.write_image(tmp_path / "x.imgf", np.array([[np.nan]]))
    path = tmp_path / "x.imgf"
    io.write_image(path, np.zeros((2, 2)))
    data = bytearray(path.read_bytes())
    data[12:16] = np.float32(np.inf).tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(io.FormatError, match="non-finite"):
        io.read_image(path)


def test_imgf_length_checked(tmp_path):
    path = tmp_path / "x.imgf"
    io.write_image(path, np.zeros((3, 3)))
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(io.FormatError):
        io.read_image(path)


def test_pgm_round_trip_is_8bit(tmp_path):
    img = np.linspace(0, 1, 20).reshape(4, 5)
    path = tmp_path / "x.pgm"
    io.write_image(path, img)
    back = io.read_image(path)
    np.testing.assert_allclose(back, np.round(img * 255) / 255)
    assert path.read_bytes().startswith(b"P5\n5 4\n255\n")


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(io.read_image(path), [[0.0, 1.0]])


# --- trajectories ----------------------------------------------------------------


def unit_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@FUZZ
@given(n=st.integers(1, 6), seed=st.integers(0, 2 ** 32 - 1), width=st.integers(1, 5000),
       height=st.integers(1, 5000), near=st.floats(1e-6, 10.0), sparse=st.booleans())
def test_trajectory_fuzz_round_trip(tmp_path_factory, n, seed, width, height, near, sparse):
    rng = np.random.default_rng(seed)
    qs = unit_quats(rng, n)
    ts = rng.standard_normal((n, 3)) * 10 ** rng.uniform(-5, 5)
    f = rng.uniform(1, 1e4, (n, 2))
    c = rng.uniform(-1e3, 1e3, (n, 2))
    cams = [PinholeCamera.from_quat(q, t, fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height, near=near)
            for q, t, (fx, fy), (cx, cy) in zip(qs, ts, f, c)]
    stamps = np.cumsum(rng.uniform(0.1, 3.0, n)) if sparse else None
    traj = CameraTrajectory(cams, stamps)
    path = tmp_path_factory.mktemp("trj") / "t.trj"
    io.write_trajectory(path, traj)
    back = io.read_trajectory(path)
    assert np.array_equal(back.timestamps, traj.timestamps)
    for a, b in zip(cams, back.cameras):
        assert np.array_equal(a.quat, b.quat) and np.array_equal(a.t, b.t) and np.array_equal(a.R, b.R)
        assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height, a.near) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height,
                                                                          b.near)


def test_trajectory_header_count_checked(tmp_path):
    path = tmp_path / "t.trj"
    path.write_text("TRJ1 2 4 4\n0 0 0 0 1 0 0 0 1 1 1 1\n")
    with pytest.raises(io.FormatError, match="promises 2"):
        io.read_trajectory(path)


def test_trajectory_minimal_header_needs_size(tmp_path):
    path = tmp_path / "t.trj"
    path.write_text("TRJ1 1\n0 0 0 0 1 0 0 0 1 1 1 1\n")
    with pytest.raises(io.FormatError, match="image size"):
        io.read_trajectory(path)
    assert io.read_trajectory(path, width=8, height=6)[0].width == 8


def test_trajectory_bad_row(tmp_path):
    path = tmp_path / "t.trj"
    path.write_text("TRJ1 1 4 4\n0 0 0 0 1 0 0 0 1 1 1\n")
    with pytest.raises(io.FormatError, match="fields"):
        io.read_trajectory(path)
    path.write_text("TRJ1 1 4 4\n0 0 0 0 1 0 0 zero 1 1 1 1\n")
    with pytest.raises(io.FormatError, match="record 1"):
        io.read_trajectory(path)


# --- clouds ----------------------------------------------------------------------


@FUZZ
@given(n=st.integers(0, 8), seed=st.integers(0, 2 ** 32 - 1), special=st.lists(finite, min_size=12, max_size=12))
def test_cloud_fuzz_round_trip(tmp_path_factory, n, seed, special):
    rng = np.random.default_rng(seed)
    table = rng.standard_normal((n, 12)) * 10 ** rng.uniform(-8, 8, (n, 12))
    if n:
        table[0] = special
    cloud = GaussianCloud(table[:, :3], table[:, 3:6], table[:, 6:10], table[:, 10], table[:, 11])
    path = tmp_path_factory.mktemp("gsc") / "c.gsc"
    io.write_cloud(path, cloud)
    assert io.read_cloud(path) == cloud


def test_cloud_bad_header(tmp_path):
    path = tmp_path / "c.gsc"
    path.write_text("GSC2 0\n")
    with pytest.raises(io.FormatError, match="GSC1"):
        io.read_cloud(path)
    path.write_text("")
    with pytest.raises(io.FormatError, match="empty"):
        io.read_cloud(path)


# --- SIM weights and run records -------------------------------------------------


def test_sim_params_round_trip(tmp_path):
    cfg = SimNetConfig(m=2, n=2, hidden=8, window=9, slope=0.2)
    params = init_params(cfg, 3)
    path = tmp_path / "w.sim"
    io.write_sim_params(path, params, cfg)
    back, cfg2 = io.read_sim_params(path)
    assert cfg2 == cfg and back == params


def test_sim_params_mismatch_detected(tmp_path):
    cfg = SimNetConfig(m=1, n=1, hidden=4, window=3)
    path = tmp_path / "w.sim"
    io.write_sim_params(path, init_params(cfg), cfg)
    (tmp_path / "w.sim.cfg").write_text("m=2\nn=1\nhidden=4\nwindow=3\nslope=0.1\n")
    with pytest.raises(io.FormatError, match="describes"):
        io.read_sim_params(path)
    os.remove(tmp_path / "w.sim.cfg")
    with pytest.raises(FileNotFoundError, match="sidecar"):
        io.read_sim_params(path)


def test_loss_history_round_trip(tmp_path):
    from spikegs.trainer import LossReport

    hist = [LossReport(1, 0.5, float("nan"), 0.5), LossReport(2, 0.25, 0.125, 0.375)]
    path = tmp_path / "h.csv"
    io.write_loss_history(path, hist)
    arr = io.read_loss_history(path)
    assert arr.shape == (2, 4) and arr[1, 3] == 0.375 and np.isnan(arr[0, 2])


def test_real_capture_resolution_documented():
    assert io.REAL_CAPTURE_SHAPE == (250, 400)
