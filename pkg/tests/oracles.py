"""Slow, independent reference implementations used only by the tests.

Each oracle is written from the definitions with plain loops and shares no code
with the package beyond the data containers.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------------------
# Rasterizer
# ---------------------------------------------------------------------------


def project_one(pos, log_scale, quat, cam, cov_floor=0.3):
    """EWA projection of one Gaussian; returns (mean2d, cov2d, depth) or None if culled."""
    p = cam.R @ pos + cam.t
    if p[2] <= cam.near:
        return None
    q = np.asarray(quat, dtype=np.float64)
    Rg = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()  # scipy is scalar-last
    S = np.diag(np.exp(log_scale))
    sigma = Rg @ S @ S @ Rg.T
    x, y, z = p
    J = np.array([[cam.fx / z, 0.0, -cam.fx * x / z ** 2],
                  [0.0, cam.fy / z, -cam.fy * y / z ** 2]])
    cov = J @ cam.R @ sigma @ cam.R.T @ J.T + cov_floor * np.eye(2)
    mean = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    return mean, cov, z


def render_naive(cloud, cam, background=0.0):
    """Per-pixel loop over depth-sorted Gaussians with the same cutoffs as the package.

    Returns (image, transmittance, n_contrib).
    """
    items = []
    for i in range(len(cloud)):
        opac = _sigmoid(cloud.opacity_logits[i])
        pr = project_one(cloud.positions[i], cloud.log_scales[i], cloud.quats[i], cam)
        if pr is None or opac < ALPHA_MIN:
            continue
        mean, cov, z = pr
        det = max(cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2, 1e-12)
        conic = np.array([cov[1, 1], -cov[0, 1], cov[0, 0]]) / det
        r2 = min(9.0, 2.0 * math.log(opac / ALPHA_MIN))
        items.append((z, i, mean, conic, r2, opac, _sigmoid(cloud.intensity_logits[i])))
    items.sort(key=lambda it: (it[0], it[1]))
    H, W = cam.height, cam.width
    image = np.full((H, W), float(background))
    trans = np.ones((H, W))
    count = np.zeros((H, W), dtype=np.int64)
    for py in range(H):
        for px in range(W):
            T, C, n = 1.0, 0.0, 0
            for _, _, mean, (a, b, c), r2, opac, col in items:
                dx, dy = px - mean[0], py - mean[1]
                maha = a * dx * dx + 2 * b * dx * dy + c * dy * dy
                if maha > r2:
                    continue
                alpha = min(opac * math.exp(-0.5 * maha), ALPHA_MAX)
                if T * (1 - alpha) < T_MIN:
                    break
                C += col * alpha * T
                T *= 1 - alpha
                n += 1
            image[py, px] = C + T * background
            trans[py, px] = T
            count[py, px] = n
    return image, trans, count


# ---------------------------------------------------------------------------
# SIM network
# ---------------------------------------------------------------------------


def _shifted_conv(x, w, b):
    """Direct convolution: output row i reads input rows i-2..i, columns j-1..j+1.

    x: (H, W, Cin); w: (3, 3, Cin, Cout).
    """
    H, W, _ = x.shape
    out = np.zeros((H, W, w.shape[3])) + b
    for i in range(H):
        for j in range(W):
            for ky in range(3):
                for kx in range(3):
                    yy, xx = i + ky - 2, j + kx - 1
                    if 0 <= yy < H and 0 <= xx < W:
                        out[i, j] += x[yy, xx] @ w[ky, kx]
    return out


def sim_forward_naive(params, cfg, window):
    """Reference SIM forward for one (T, H, W) window in float64."""
    x = np.transpose(np.asarray(window, dtype=np.float64), (1, 2, 0))
    leaky = lambda z: np.where(z > 0, z, cfg.slope * z)  # noqa: E731
    branches = []
    for r in range(4):
        h = np.rot90(x, r, axes=(0, 1))
        for w, b in zip(params.conv_w, params.conv_b):
            h = leaky(_shifted_conv(h, w.astype(np.float64), b.astype(np.float64)))
        shifted = np.zeros_like(h)
        shifted[1:] = h[:-1]
        branches.append(np.rot90(shifted, -r, axes=(0, 1)))
    h = np.concatenate(branches, axis=-1)
    for i, (w, b) in enumerate(zip(params.fuse_w, params.fuse_b)):
        h = h @ w.astype(np.float64) + b.astype(np.float64)
        if i < cfg.n - 1:
            h = leaky(h)
    return 1.0 / (1.0 + np.exp(-h[..., 0]))


# ---------------------------------------------------------------------------
# Spike camera and reconstructions
# ---------------------------------------------------------------------------


def integrate_and_fire(intensities, threshold, sigma, v0=0.0):
    """Single-pixel ideal sensor: returns the binary readout list."""
    v, out = v0, []
    for I in intensities:
        v += sigma * I
        if v >= threshold:
            out.append(1)
            v = math.fmod(v, threshold)
        else:
            out.append(0)
    return out


def tfp_naive(bits, t, half):
    n = bits.shape[0]
    lo, hi = max(0, t - half), min(n, t + half + 1)
    return bits[lo:hi].sum(axis=0) / (hi - lo)


def mean_abs(a, b):
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
