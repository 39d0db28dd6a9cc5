import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tfp_naive
from spikegs.recon import ReconWindow, exposure_target, tfi, tfp, tfp_many
from spikegs.spike_sim import SpikeCamParams, SpikeStream, simulate_ideal


def stream_of(column):
    return SpikeStream(np.asarray(column, dtype=np.uint8).reshape(-1, 1, 1))


def test_eleven_spikes_in_33():
    col = np.zeros(33, np.uint8)
    col[::3] = 1
    assert tfp(stream_of(col), ReconWindow(16, 16))[0, 0] == pytest.approx(11 / 33)


def test_saturated_window_is_one():
    assert tfp(stream_of(np.ones(33)), ReconWindow(16, 16))[0, 0] == 1.0


def test_ideal_quarter_intensity():
    s = simulate_ideal(np.full((33, 1, 1), 0.25), initial=np.zeros((1, 1)))
    assert tfp(s, ReconWindow(16, 16))[0, 0] == pytest.approx(8 / 33)


def test_window_validation():
    with pytest.raises(ValueError):
        ReconWindow(5, -1)
    with pytest.raises(ValueError):
        ReconWindow.of_length(3, 4)
    with pytest.raises(ValueError):
        tfp(stream_of(np.ones(5)), ReconWindow(5, 1))
    assert ReconWindow.of_length(10, 33).length == 33


@settings(max_examples=30)
@given(seed=st.integers(0, 2 ** 31 - 1), half=st.integers(0, 20))
def test_tfp_many_equals_tfp_and_oracle(seed, half):
    rng = np.random.default_rng(seed)
    s = SpikeStream((rng.random((40, 3, 4)) < 0.3).astype(np.uint8))
    centers = rng.integers(0, 40, size=6)
    many = tfp_many(s, centers, half)
    for c, img in zip(centers, many):
        np.testing.assert_array_equal(img, tfp(s, ReconWindow(int(c), half)))
        np.testing.assert_array_equal(img, tfp_naive(s.bits, int(c), half))
        np.testing.assert_array_equal(exposure_target(s, ReconWindow(int(c), half)), img)
        assert np.all((img >= 0) & (img <= 1))


@pytest.mark.parametrize("T", [33, 65])
def test_quantization_bound(T):
    rng = np.random.default_rng(T)
    I = rng.uniform(0, 1, (1, 8, 8))
    s = simulate_ideal(np.repeat(I, 200, axis=0), seed=1)
    img = tfp(s, ReconWindow.of_length(100, T))
    assert np.all(np.abs(img - I[0]) <= 1.0 / T + 1e-12)


def test_tfi_gap_between_bracketing_spikes():
    col = np.zeros(20, np.uint8)
    col[[10, 14]] = 1
    assert tfi(stream_of(col), 12)[0, 0] == 0.25


def test_tfi_every_readout_is_one():
    assert tfi(stream_of(np.ones(10)), 4)[0, 0] == 1.0


def test_tfi_uses_recent_spikes_when_none_follow():
    col = np.zeros(20, np.uint8)
    col[[2, 7]] = 1
    assert tfi(stream_of(col), 15)[0, 0] == pytest.approx(1 / 5)


def test_tfi_falls_back_to_global_rate():
    col = np.zeros(20, np.uint8)
    assert tfi(stream_of(col), 5)[0, 0] == 0.0
    col[3] = 1
    assert tfi(stream_of(col), 5)[0, 0] == pytest.approx(1 / 20)


def test_tfi_threshold_and_sigma():
    col = np.zeros(20, np.uint8)
    col[[4, 12]] = 1
    assert tfi(stream_of(col), 8, threshold=2.0, sigma=1.0)[0, 0] == 0.25


@pytest.mark.parametrize("period", [1, 3, 11, 33])
def test_tfi_equals_tfp_on_periodic_streams(period):
    col = np.zeros(99, np.uint8)
    col[period - 1::period] = 1
    s = stream_of(col)
    assert tfi(s, 50)[0, 0] == pytest.approx(tfp(s, ReconWindow.of_length(50, 33))[0, 0])


def test_tfi_rejects_out_of_range():
    with pytest.raises(ValueError):
        tfi(stream_of(np.ones(5)), 5)


def test_rate_law_ideal_combos():
    rng = np.random.default_rng(7)
    for _ in range(20):
        theta, sigma = rng.uniform(0.5, 2.0, 2)
        I = rng.uniform(0, min(1.0, theta / sigma))
        n = 500
        s = simulate_ideal(np.full((n, 1, 1), I), SpikeCamParams(threshold=theta, sigma=sigma), seed=0)
        assert abs(s.bits.mean() - sigma * I / theta) <= 1 / n
