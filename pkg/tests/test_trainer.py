import numpy as np
import pytest

from conftest import random_cloud
from oracles import mean_abs
from spikegs.recon import ReconWindow, exposure_target
from spikegs.scenegen import CameraTrajectory, Intrinsics, TrajectorySpec, gen_spiral
from spikegs.spike_sim import SpikeStream
from spikegs.splat import PARAM_NAMES, render
from spikegs.trainer import (TrainConfig, densify_prune, exposure_readouts, l1, loss_and_grads, loss_exposure,
                             loss_instant, total_loss, train, valid_centers)

INTR = Intrinsics(fx=24.0, fy=24.0, cx=11.5, cy=11.5, width=24, height=24)


def spiral(n=40, revolutions=0.1):
    return gen_spiral(TrajectorySpec(radius=3.0, revolutions=revolutions, num_readouts=n, intrinsics=INTR))


def random_stream(n=40, size=24, seed=0):
    rng = np.random.default_rng(seed)
    return SpikeStream((rng.random((n, size, size)) < 0.3).astype(np.uint8))


# --- losses ------------------------------------------------------------------


def test_instant_loss_cases(rng):
    a = np.zeros((5, 5))
    assert loss_instant(a, a) == 0.0
    assert loss_instant(a, np.ones((5, 5))) == 1.0
    x, y = rng.random((7, 7)), rng.random((7, 7))
    assert loss_instant(x, y) == pytest.approx(mean_abs(x, y), rel=1e-12)
    with pytest.raises(ValueError):
        loss_instant(a, np.zeros((4, 5)))


def test_exposure_readouts_are_even():
    assert exposure_readouts(20, TrainConfig(K=5, window=33)).tolist() == [4, 12, 20, 28, 36]
    assert exposure_readouts(7, TrainConfig(K=1, window=1)).tolist() == [7]


@pytest.mark.parametrize("kw", [dict(K=0), dict(K=5, window=3), dict(window=32), dict(K=4, window=33),
                                dict(lam=-1.0), dict(iterations=-1)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_static_camera_exposure_is_single_render(rng):
    cam = spiral()[0]
    traj = CameraTrajectory([cam] * 40)
    cloud = random_cloud(rng, 5)
    stream = random_stream()
    cfg = TrainConfig(K=5, window=9)
    target = exposure_target(stream, ReconWindow(20, 4))
    assert loss_exposure(cloud, traj, 20, cfg, stream) == pytest.approx(mean_abs(render(cloud, cam).image, target),
                                                                         rel=1e-12)


def test_exposure_loss_matches_brute_force_average(rng):
    traj = spiral(revolutions=0.3)
    cloud = random_cloud(rng, 2, scale=(0.2, 0.4))
    stream = random_stream()
    cfg = TrainConfig(K=5, window=9)
    imgs = [render(cloud, traj[k]).image.astype(np.longdouble) for k in (16, 18, 20, 22, 24)]
    blurred = sum(imgs) / 5
    target = stream.bits[16:25].mean(axis=0)
    ref = float(np.mean(np.abs(blurred - target)))
    assert loss_exposure(cloud, traj, 20, cfg, stream) == pytest.approx(ref, rel=1e-12)


def test_exposure_loss_zero_when_renders_match_target(rng):
    cam = spiral()[0]
    traj = CameraTrajectory([cam] * 40)
    cloud = random_cloud(rng, 4)
    cfg = TrainConfig(K=3, window=5)
    target = render(cloud, cam).image
    assert loss_exposure(cloud, traj, 20, cfg, random_stream(), target=target) == pytest.approx(0.0, abs=1e-15)


def test_single_readout_window_uses_binary_target(rng):
    traj = spiral()
    cloud = random_cloud(rng, 4)
    stream = random_stream()
    cfg = TrainConfig(K=1, window=1)
    expected = mean_abs(render(cloud, traj[11]).image, stream.bits[11])
    assert loss_exposure(cloud, traj, 11, cfg, stream) == pytest.approx(expected, rel=1e-12)


def test_window_outside_stream_rejected(rng):
    with pytest.raises(ValueError):
        loss_exposure(random_cloud(rng, 2), spiral(), 2, TrainConfig(K=5, window=9), random_stream())


def test_total_loss_cases():
    assert total_loss(0.3, 0.7, TrainConfig(lam=0.0)).total == 0.3
    assert total_loss(0.1, 0.1, TrainConfig(lam=1.0)).total == pytest.approx(0.2)
    r = total_loss(0.25, 0.5, TrainConfig(lam=0.5, instant_weight=1.0), iteration=3)
    assert r.total == 0.25 + 0.5 * 0.5 and r.iteration == 3
    # a zero-weight term may be NaN without poisoning the total
    assert total_loss(float("nan"), 0.2, TrainConfig(instant_weight=0.0)).total == 0.2


def _objective(cloud, traj, t, cfg, inst, expo, frozen):
    """Weighted loss with every pose's fragment lists held fixed."""
    out = {k: render(cloud, traj[k], fragments=f).image for k, f in frozen.items()}
    value = 0.0
    if cfg.instant_weight:
        value += cfg.instant_weight * l1(out[t], inst)[0]
    if cfg.lam:
        value += cfg.lam * l1(np.mean([out[k] for k in exposure_readouts(t, cfg)], axis=0), expo)[0]
    return value


@pytest.mark.parametrize("lam,inst", [(1.0, 1.0), (0.7, 0.0), (0.0, 1.0)])
def test_combined_gradient_matches_finite_differences(lam, inst):
    rng = np.random.default_rng(5)
    traj = spiral(revolutions=0.3)
    cloud = random_cloud(rng, 3, scale=(0.15, 0.3))
    cfg = TrainConfig(K=3, window=9, lam=lam, instant_weight=inst)
    t = 20
    inst_tgt, exp_tgt = rng.random((24, 24)), rng.random((24, 24))
    report, grads, _ = loss_and_grads(cloud, traj, t, cfg, inst_tgt, exp_tgt)
    frozen = {k: render(cloud, traj[k]).fragments for k in set(exposure_readouts(t, cfg).tolist()) | {t}}
    assert report.total == pytest.approx(_objective(cloud, traj, t, cfg, inst_tgt, exp_tgt, frozen))
    h = 1e-6
    for name in PARAM_NAMES:
        arr = getattr(cloud, name)
        for idx in list(np.ndindex(arr.shape))[::2]:
            vals = []
            for sign in (1, -1):
                c = cloud.copy()
                getattr(c, name)[idx] += sign * h
                vals.append(_objective(c, traj, t, cfg, inst_tgt, exp_tgt, frozen))
            fd = (vals[0] - vals[1]) / (2 * h)
            an = getattr(grads, name)[idx]
            assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an)) + 1e-9, (name, idx, fd, an)


def test_exposure_gradient_is_mean_of_pose_gradients(rng):
    from spikegs.splat import render_backward

    traj = spiral(revolutions=0.3)
    cloud = random_cloud(rng, 4)
    cfg = TrainConfig(K=5, window=9, lam=1.0, instant_weight=0.0)
    target = rng.random((24, 24))
    _, grads, _ = loss_and_grads(cloud, traj, 20, cfg, None, target)
    outs = [render(cloud, traj[k]) for k in exposure_readouts(20, cfg)]
    g_img = l1(np.mean([o.image for o in outs], axis=0), target)[1]
    ref = [render_backward(cloud, traj[int(k)], 0.0, g_img, o) for k, o in zip(exposure_readouts(20, cfg), outs)]
    np.testing.assert_allclose(grads.positions, sum(r.positions for r in ref) / 5, rtol=1e-10, atol=1e-14)


# --- densification -------------------------------------------------------------


def test_densify_nothing_selected_is_identity(rng):
    cloud = random_cloud(rng, 6, opacity=(0.3, 0.9))
    res = densify_prune(cloud, np.zeros(6), np.ones(6), TrainConfig(), 3.0, 24)
    assert res.cloud == cloud and res.n_new == 0


def test_densify_one_above_threshold_adds_one(rng):
    cfg = TrainConfig()
    cloud = random_cloud(rng, 6)
    acc = np.zeros(6)
    acc[2] = 1.0
    for extent in (100.0, 0.01):  # clone (small) and split (large)
        res = densify_prune(cloud, acc, np.ones(6), cfg, extent, 24, rng=0)
        assert len(res.cloud) == 7


def test_prune_drops_transparent(rng):
    cloud = random_cloud(rng, 4)
    cloud.opacity_logits[1] = np.log(1e-4 / (1 - 1e-4))
    res = densify_prune(cloud, np.zeros(4), np.ones(4), TrainConfig(), 3.0, 24)
    assert len(res.cloud) == 3 and 1 not in res.keep


def test_densify_respects_budget(rng):
    cloud = random_cloud(rng, 6)
    res = densify_prune(cloud, np.ones(6), np.ones(6), TrainConfig(max_gaussians=8), 100.0, 24)
    assert len(res.cloud) == 8


# --- training loop -------------------------------------------------------------


def _setup(seed=0):
    rng = np.random.default_rng(seed)
    traj = spiral()
    gt = random_cloud(rng, 4)
    frames = np.stack([render(gt, c).image for c in traj.cameras])
    stream = SpikeStream((rng.random(frames.shape) < frames).astype(np.uint8))
    init = random_cloud(rng, 10)
    return stream, traj, init, frames


def test_zero_iterations_returns_initial_cloud():
    stream, traj, init, frames = _setup()
    res = train(stream, traj, init, frames, TrainConfig(K=3, window=9, iterations=0))
    assert res.cloud == init and res.history == []


def test_training_is_deterministic_and_reduces_loss():
    stream, traj, init, frames = _setup()
    cfg = TrainConfig(K=3, window=9, iterations=60, densify_from=20, densify_interval=20, seed=4)
    a = train(stream, traj, init, frames, cfg)
    b = train(stream, traj, init, frames, cfg)
    assert a.cloud == b.cloud
    tot = np.array([r.total for r in a.history])
    assert tot[-10:].mean() < tot[:10].mean()
    for r in a.history:
        assert r.total == pytest.approx(r.instant + cfg.lam * r.exposure, rel=1e-12)


def test_train_accepts_dict_and_callable_targets():
    stream, traj, init, frames = _setup()
    cfg = TrainConfig(K=3, window=9, iterations=5, densify=False)
    centers = valid_centers(40, 40, cfg)
    a = train(stream, traj, init, frames, cfg)
    b = train(stream, traj, init, {int(t): frames[t] for t in centers}, cfg)
    c = train(stream, traj, init, lambda t: frames[t], cfg)
    assert a.cloud == b.cloud == c.cloud


def test_short_trajectory_rejected():
    stream, traj, init, frames = _setup()
    with pytest.raises(ValueError):
        train(stream, CameraTrajectory(traj.cameras[:10]), init, frames, TrainConfig(K=3, window=9))
