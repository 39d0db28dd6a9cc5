"""Command-line entry point: ``spikegs <subcommand> ...``.

Every subcommand accepts ``--config FILE`` (key=value lines), repeated
``--set key=value`` overrides applied after the file, and ``--seed``.
Image stacks live in directories of ``NNNNN.imgf`` files, one per readout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .config import parse_config, parse_overrides, pick
from .metrics import psnr, ssim
from .pipeline import ToyConfig, ablate_losses, make_toy_dataset, random_init_cloud
from .recon import tfi, tfp_many
from .scenegen import Intrinsics, SceneSpec, TrajectorySpec, gen_scene, gen_spiral, render_gt_frames
from .sim_net import SimNetConfig, SimSchedule, sim_predict, sim_train
from .spike_sim import SpikeCamParams, simulate_ideal, simulate_poisson
from .trainer import TrainConfig, render_views, train

logger = logging.getLogger("spikegs")

SCENE_KEYS = {"gaussians": 50, "image_size": 100, "focal": 100.0, "readouts": 240, "radius": 4.0,
              "revolutions": 0.5, "height_span": 1.0, "background": 0.0, "seed": 0}
SIMULATE_KEYS = {"mode": "poisson", "seed": 0}
RECON_KEYS = {"window": 33, "threshold": 1.0, "sigma": 1.0}
GS_KEYS = {"init_count": 200, "init_opacity": 0.1, "bbox_min": (-1.0, -1.0, -1.0), "bbox_max": (1.0, 1.0, 1.0),
           "instant_source": "sim", "tfp_window": 33}
ABLATE_KEYS = {"sim_steps": 2500}


class CliError(Exception):
    """A user-facing failure; printed without a traceback."""


def _require(path) -> str:
    if path is None or not os.path.exists(path):
        raise CliError(f"input not found: {path}")
    return path


def _settings(args, *targets) -> dict:
    values = {}
    if args.config:
        values.update(parse_config(_require(args.config), *targets))
    values.update(parse_overrides(args.set, *targets))
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _frame_paths(directory) -> list:
    _require(directory)
    names = sorted(n for n in os.listdir(directory) if n.endswith((".imgf", ".pgm")))
    if not names:
        raise CliError(f"no .imgf or .pgm images in {directory}")
    return [os.path.join(directory, n) for n in names]


def _read_stack(path) -> tuple[list, np.ndarray]:
    """Images from one file or a directory; returns (names, stack)."""
    _require(path)
    paths = _frame_paths(path) if os.path.isdir(path) else [path]
    return [os.path.basename(p) for p in paths], np.stack([io.read_image(p) for p in paths])


def _write_stack(directory, images, indices) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, img in zip(indices, images):
        io.write_image(os.path.join(directory, f"{int(k):05d}.imgf"), img)


def _parse_indices(text, limit: int) -> np.ndarray:
    """``"all"``, ``"a:b[:step]"`` or comma-separated readout indices."""
    if text in (None, "all"):
        return np.arange(limit)
    if ":" in text:
        parts = [int(p) if p else None for p in text.split(":")]
        return np.arange(limit)[slice(*parts)]
    return np.array([int(p) for p in text.split(",")], dtype=np.int64)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_scenegen(args) -> None:
    s = {**SCENE_KEYS, **_settings(args, SCENE_KEYS)}
    size = s["image_size"]
    intr = Intrinsics(fx=s["focal"], fy=s["focal"], cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size)
    cloud = gen_scene(SceneSpec(count=s["gaussians"], seed=s["seed"]))
    traj = gen_spiral(TrajectorySpec(radius=s["radius"], height_start=-s["height_span"] / 2,
                                     height_span=s["height_span"], revolutions=s["revolutions"],
                                     num_readouts=s["readouts"], intrinsics=intr))
    frames = render_gt_frames(cloud, traj, s["background"])
    os.makedirs(args.out, exist_ok=True)
    io.write_cloud(os.path.join(args.out, "scene.gsc"), cloud)
    io.write_trajectory(os.path.join(args.out, "trajectory.trj"), traj)
    _write_stack(os.path.join(args.out, "frames"), frames, range(len(frames)))
    print(f"wrote {len(cloud)} Gaussians and {len(frames)} frames to {args.out}")


def cmd_simulate(args) -> None:
    s = _settings(args, SpikeCamParams, SIMULATE_KEYS)
    _, frames = _read_stack(args.frames)
    cam = SpikeCamParams(**pick(s, SpikeCamParams))
    seed = s.get("seed", 0)
    mode = s.get("mode", "poisson")
    if mode == "ideal":
        stream = simulate_ideal(frames.astype(np.float64), cam, seed=seed)
    elif mode == "poisson":
        stream = simulate_poisson(frames.astype(np.float64), cam, seed=seed)
    else:
        raise CliError(f"mode must be 'ideal' or 'poisson', got {mode!r}")
    io.write_spk(args.out, stream)
    print(f"wrote {stream.num_readouts} readouts of {stream.width}x{stream.height} to {args.out}")


def cmd_recon(args) -> None:
    s = {**RECON_KEYS, **_settings(args, RECON_KEYS)}
    stream = io.read_spk(_require(args.spk))
    centers = _parse_indices(args.t, stream.num_readouts)
    if args.method == "tfp":
        images = tfp_many(stream, centers, s["window"] // 2)
    elif args.method == "tfi":
        images = np.stack([tfi(stream, int(t), s["threshold"], s["sigma"]) for t in centers])
    else:
        params, cfg = io.read_sim_params(_require(args.weights))
        h = cfg.window // 2
        if centers.min() < h or centers.max() >= stream.num_readouts - h:
            raise CliError(f"SIM needs {h} readouts on each side of every center")
        images = sim_predict(params, cfg, stream, centers)
    if len(centers) == 1 and not os.path.isdir(args.out) and os.path.splitext(args.out)[1]:
        io.write_image(args.out, images[0])
    else:
        _write_stack(args.out, images, centers)
    print(f"wrote {len(images)} {args.method} image(s) to {args.out}")


def cmd_train_sim(args) -> None:
    s = _settings(args, SimNetConfig, SimSchedule)
    stream = io.read_spk(_require(args.spk))
    cfg = SimNetConfig(**pick(s, SimNetConfig))
    schedule = SimSchedule(**pick(s, SimSchedule))
    params, state = sim_train(stream, cfg, schedule)
    io.write_sim_params(args.out, params, cfg)
    last = state.history[-1][1] if state.history else float("nan")
    print(f"trained SIM for {schedule.steps} steps (last batch L1 {last:.5f}); wrote {args.out}")


def _instant_images(kind, stream, centers, s, weights):
    if kind == "sim":
        params, cfg = io.read_sim_params(_require(weights))
        return sim_predict(params, cfg, stream, centers)
    if kind == "tfp":
        return tfp_many(stream, centers, s["tfp_window"] // 2)
    if kind == "tfi":
        return np.stack([tfi(stream, int(t)) for t in centers])
    raise CliError(f"instant_source must be 'sim', 'tfp' or 'tfi', got {kind!r}")


def cmd_train_gs(args) -> None:
    s = {**GS_KEYS, **_settings(args, TrainConfig, GS_KEYS)}
    stream = io.read_spk(_require(args.spk))
    traj = io.read_trajectory(_require(args.trajectory))
    cfg = TrainConfig(**pick(s, TrainConfig))
    kind = s["instant_source"]
    if kind == "sim" and args.weights is None:
        raise CliError("instant_source=sim needs --weights (run train-sim first)")
    sim_window = io.read_sim_params(_require(args.weights))[1].window if kind == "sim" else 0
    h = max(cfg.window, s["tfp_window"] if kind == "tfp" else 0, sim_window) // 2
    centers = np.arange(h, min(stream.num_readouts, len(traj)) - h)
    if centers.size == 0:
        raise CliError("stream too short for the configured windows")
    targets = dict(zip(centers.tolist(), _instant_images(kind, stream, centers, s, args.weights)))
    init = random_init_cloud((s["bbox_min"], s["bbox_max"]), s["init_count"], seed=cfg.seed,
                             opacity=s["init_opacity"])
    result = train(stream, traj, init, targets, cfg, centers=centers, log_every=args.log_every)
    io.write_cloud(args.out, result.cloud)
    io.write_run_config(args.out + ".cfg", {**s, **vars(cfg)})
    io.write_loss_history(args.out + ".history.csv", result.history)
    print(f"trained {len(result.cloud)} Gaussians in {result.seconds:.1f}s "
          f"({result.seconds_per_iteration * 1000:.1f} ms/iteration); wrote {args.out}")


def cmd_render(args) -> None:
    s = _settings(args, {"background": 0.0, "seed": 0})
    cloud = io.read_cloud(_require(args.cloud))
    traj = io.read_trajectory(_require(args.trajectory))
    idx = _parse_indices(args.readouts, len(traj))
    images = render_views(cloud, [traj[int(k)] for k in idx], s.get("background", 0.0))
    _write_stack(args.out, images, idx)
    print(f"rendered {len(images)} view(s) to {args.out}")


def cmd_eval(args) -> None:
    _settings(args, {"seed": 0})
    names, pred = _read_stack(args.pred)
    gt_names, gt = _read_stack(args.gt)
    if len(pred) != len(gt):
        raise CliError(f"{args.pred} has {len(pred)} images but {args.gt} has {len(gt)}")
    rows = [(n, psnr(p, g), ssim(p, g)) for n, p, g in zip(names, pred, gt)]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["image", "psnr", "ssim"])
        for name, p, q in rows:
            writer.writerow([name, repr(p), repr(q)])
    finally:
        if out is not sys.stdout:
            out.close()
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    print(f"mean PSNR {mean_p:.2f} dB, SSIM {100 * mean_s:.2f}", file=sys.stderr if not args.csv else sys.stdout)


def cmd_ablate(args) -> None:
    s = _settings(args, ToyConfig, TrainConfig, ABLATE_KEYS)
    toy = ToyConfig(**pick(s, ToyConfig))
    cfg = TrainConfig(**pick(s, TrainConfig))
    data = make_toy_dataset(toy)
    if args.weights:
        params, sim_cfg = io.read_sim_params(_require(args.weights))
    else:
        sim_cfg = SimNetConfig()
        steps = s.get("sim_steps", ABLATE_KEYS["sim_steps"])
        params, _ = sim_train(data.stream, sim_cfg, SimSchedule(steps=steps, seed=toy.seed))
    results = ablate_losses(data, (params, sim_cfg), replace(cfg, background=toy.background))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "psnr", "ssim", "seconds", "seconds_per_iteration", "n_gaussians"])
        for r in results:
            writer.writerow([r.name, repr(r.psnr), repr(r.ssim), repr(r.seconds), repr(r.seconds_per_iteration),
                             r.n_gaussians])
    for r in results:
        print(f"{r.name:>14}: PSNR {r.psnr:.2f} dB, SSIM {100 * r.ssim:.2f}")
    print(f"wrote {args.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikegs", description="Gaussian splatting from spike camera streams.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _common(sub.add_parser("scenegen", help="procedural scene, spiral trajectory and clean frames"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_scenegen)

    p = _common(sub.add_parser("simulate", help="spike stream from a directory of frames"))
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True, help="output .spk")
    p.set_defaults(func=cmd_simulate)

    p = _common(sub.add_parser("recon", help="instant images from spikes"))
    p.add_argument("method", choices=["tfp", "tfi", "sim"])
    p.add_argument("--spk", required=True)
    p.add_argument("--t", help="readouts: 'all', 'a:b[:step]' or 'i,j,k' (default all)")
    p.add_argument("--weights", help="SIM weights (.sim) for method sim")
    p.add_argument("--out", required=True, help="image file for one readout, otherwise a directory")
    p.set_defaults(func=cmd_recon)

    p = _common(sub.add_parser("train-sim", help="self-supervised SIM training on one stream"))
    p.add_argument("--spk", required=True)
    p.add_argument("--out", required=True, help="output .sim (a .sim.cfg sidecar is written too)")
    p.set_defaults(func=cmd_train_sim)

    p = _common(sub.add_parser("train-gs", help="fit a Gaussian cloud to a stream and trajectory"))
    p.add_argument("--spk", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--weights", help="SIM weights for instant_source=sim")
    p.add_argument("--out", required=True, help="output .gsc")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_gs)

    p = _common(sub.add_parser("render", help="render a cloud along a trajectory"))
    p.add_argument("--cloud", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--readouts", help="'all', 'a:b[:step]' or 'i,j,k' (default all)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = _common(sub.add_parser("eval", help="PSNR/SSIM of predictions against ground truth"))
    p.add_argument("--pred", required=True, help="image file or directory")
    p.add_argument("--gt", required=True, help="image file or directory")
    p.add_argument("--csv", help="write rows here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = _common(sub.add_parser("ablate", help="three-way loss ablation on the toy scene, as CSV"))
    p.add_argument("--weights", help="reuse trained SIM weights instead of training")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except CliError as err:
        print(f"spikegs {args.command}: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"spikegs {args.command}: input not found: {err.filename or err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"spikegs {args.command}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
