"""Differentiable monochrome 3D Gaussian rasterizer.

Gaussians are projected with the local-affine (EWA) approximation, sorted
globally by camera depth and alpha-composited front to back per pixel.  Pixel
``(x, y)`` has its center at image coordinates ``(x, y)``.  Cameras follow the
usual computer-vision convention: x right, y down, z forward.

Only fragments that matter are materialized: a Gaussian contributes to pixels
within its 3-sigma ellipse whose alpha is at least 1/255, and a pixel's list
ends once almost no light gets through (``T_MIN``).  The backward pass
treats that support as constant, so gradients are those of the composite over
a fixed fragment set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _raster

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
COV_FLOOR = 0.3
DET_MIN = 1e-12
MAHA_CUTOFF = 9.0  # squared Mahalanobis radius of the 3-sigma ellipse
T_MIN = 1e-4  # a pixel stops accepting fragments below this transmittance


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from quaternions (..., 4) in (w, x, y, z) order."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat`, returning ``w >= 0``."""
    from scipy.spatial.transform import Rotation

    xyzw = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)
    return np.where(q[..., :1] < 0, -q, q)


# ---------------------------------------------------------------------------
# Scene containers
# ---------------------------------------------------------------------------


@dataclass
class PinholeCamera:
    """World-to-camera pose ``x_cam = R @ x_world + t`` plus intrinsics."""

    R: np.ndarray
    t: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    # quaternion the rotation was built from, kept so files round-trip exactly
    q: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        self.width = int(self.width)
        self.height = int(self.height)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), **intrinsics) -> "PinholeCamera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            # looking along the up vector; pick any perpendicular
            right = np.cross(forward, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(R=R, t=-R @ eye, **intrinsics)

    @classmethod
    def from_quat(cls, q, t, **intrinsics) -> "PinholeCamera":
        """Camera whose world-to-camera rotation is the quaternion ``q`` (w, x, y, z)."""
        q = np.asarray(q, dtype=np.float64)
        return cls(R=quat_to_rotmat(q), t=t, q=q, **intrinsics)

    @property
    def quat(self) -> np.ndarray:
        return self.q.copy() if self.q is not None else rotmat_to_quat(self.R)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def with_pose(self, R, t) -> "PinholeCamera":
        return replace(self, R=np.asarray(R, dtype=np.float64), t=np.asarray(t, dtype=np.float64), q=None)

    def scaled(self, factor: int) -> "PinholeCamera":
        """Same pose with intrinsics and resolution multiplied by ``factor``."""
        return replace(self, fx=self.fx * factor, fy=self.fy * factor, cx=self.cx * factor,
                       cy=self.cy * factor, width=self.width * factor, height=self.height * factor)


PARAM_NAMES = ("positions", "log_scales", "quats", "opacity_logits", "intensity_logits")


@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian set in unconstrained (pre-activation) form."""

    positions: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    intensity_logits: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.intensity_logits = np.asarray(self.intensity_logits, dtype=np.float64).reshape(n)

    @classmethod
    def from_activated(cls, positions, scales, quats, opacities, intensities) -> "GaussianCloud":
        return cls(positions, np.log(scales), quats, logit(opacities), logit(intensities))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def intensities(self) -> np.ndarray:
        return sigmoid(self.intensity_logits)

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.params().items()})

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(**{k: v[index] for k, v in self.params().items()})

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(**{k: np.concatenate([v, getattr(other, k)])
                                for k, v in self.params().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params().values())

    def __eq__(self, other):
        if not isinstance(other, GaussianCloud):
            return NotImplemented
        return all(np.array_equal(v, getattr(other, k)) for k, v in self.params().items())


@dataclass
class SplatGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    intensity_logits: np.ndarray
    means2d: np.ndarray  # image-plane mean gradients, used by densification

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def __iadd__(self, other):
        for name in PARAM_NAMES + ("means2d",):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def scale(self, factor: float) -> "SplatGradients":
        return SplatGradients(**{k: v * factor for k, v in vars(self).items()})

    @classmethod
    def zeros(cls, n: int) -> "SplatGradients":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n),
                   np.zeros(n), np.zeros((n, 2)))


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


@dataclass
class Projection:
    """Per-Gaussian screen-space quantities plus what the backward pass reuses."""

    means2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    conics: np.ndarray  # (N, 3): a, b, c of the inverse covariance
    depths: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) bool, False when culled by the near plane
    p_cam: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    Rq: np.ndarray = field(repr=False)
    cov3d: np.ndarray = field(repr=False)


def project(cloud: GaussianCloud, cam: PinholeCamera, cov_floor: float = COV_FLOOR) -> Projection:
    """Project every Gaussian onto the image plane.

    The 2D covariance is ``J W Sigma W^T J^T + cov_floor * I`` with ``W`` the
    camera rotation and ``J`` the perspective Jacobian at the Gaussian mean.
    Gaussians at or behind the near plane are flagged invalid.
    """
    p_cam = cloud.positions @ cam.R.T + cam.t
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    valid = z > cam.near
    zs = np.where(valid, z, 1.0)

    Rq = quat_to_rotmat(cloud.quats)
    M = Rq * cloud.scales[:, None, :]
    cov3d = M @ np.swapaxes(M, 1, 2)

    J = np.zeros((len(cloud), 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / zs ** 2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / zs ** 2
    T = J @ cam.R
    cov2d = T @ cov3d @ np.swapaxes(T, 1, 2)
    cov2d[:, 0, 0] += cov_floor
    cov2d[:, 1, 1] += cov_floor

    A, B, C = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = np.maximum(A * C - B * B, DET_MIN)
    conics = np.stack([C / det, -B / det, A / det], axis=1)
    means2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    return Projection(means2d, cov2d, conics, z, valid, p_cam, J, Rq, cov3d)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


@dataclass
class Fragments:
    """Fixed per-pixel fragment lists, flattened and grouped by pixel.

    Fragments of pixel ``pixels[r]`` occupy ``offsets[r]:offsets[r + 1]`` of
    the flat arrays, front to back.
    """

    pixels: np.ndarray  # (P,) flat pixel index
    offsets: np.ndarray  # (P + 1,) segment boundaries
    gid: np.ndarray  # (F,) Gaussian index
    clamped: np.ndarray  # (F,) alpha hit ALPHA_MAX

    @property
    def row(self) -> np.ndarray:
        """Segment (pixel row) index of every fragment."""
        return np.repeat(np.arange(self.pixels.size), np.diff(self.offsets))

    @classmethod
    def empty(cls) -> "Fragments":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros(1, dtype=np.int64), z, z.astype(bool))


@dataclass
class RenderOutput:
    image: np.ndarray
    transmittance: np.ndarray
    n_contrib: np.ndarray
    fragments: Fragments = field(repr=False)
    projection: Projection = field(repr=False)
    # per-fragment values kept for the backward pass
    _alpha: np.ndarray = field(repr=False, default=None)
    _G: np.ndarray = field(repr=False, default=None)
    _T: np.ndarray = field(repr=False, default=None)


def _screen_terms(proj: Projection):
    """Contiguous per-Gaussian arrays the raster loops read."""
    mx = np.ascontiguousarray(proj.means2d[:, 0])
    my = np.ascontiguousarray(proj.means2d[:, 1])
    ca, cb, cc = (np.ascontiguousarray(proj.conics[:, k]) for k in range(3))
    return mx, my, ca, cb, cc


def _collect_fragments(proj: Projection, opac: np.ndarray, cam: PinholeCamera) -> Fragments:
    """Per-pixel front-to-back lists of Gaussians inside their cutoff ellipse.

    A pair is kept when it lies within the 3-sigma ellipse and its alpha is
    at least 1/255.  Early termination is applied later, while compositing.
    """
    idx = np.flatnonzero(proj.valid & (opac >= ALPHA_MIN))
    # depth order here survives the stable per-pixel binning
    order = idx[np.argsort(proj.depths[idx], kind="stable")]
    # opac * exp(-maha / 2) >= ALPHA_MIN  <=>  maha <= 2 log(opac / ALPHA_MIN)
    r2 = np.zeros(len(opac))
    r2[order] = np.minimum(MAHA_CUTOFF, 2.0 * np.log(opac[order] / ALPHA_MIN))
    mx, my, ca, cb, cc = _screen_terms(proj)
    cov_yy = np.ascontiguousarray(proj.cov2d[:, 1, 1])
    offsets, gid = _raster.bin_fragments(order, mx, my, ca, cb, cc, cov_yy, r2, cam.width, cam.height)
    pixels = np.flatnonzero(np.diff(offsets))
    return Fragments(pixels, np.r_[0, offsets[pixels + 1]], gid, np.zeros(gid.size, dtype=bool))


def render(cloud: GaussianCloud, cam: PinholeCamera, background: float = 0.0,
           cov_floor: float = COV_FLOOR, fragments: Fragments | None = None) -> RenderOutput:
    """Render a grayscale image of ``cloud`` seen from ``cam``.

    Passing the ``fragments`` of an earlier render freezes the fragment set
    (which Gaussians touch which pixels, in which order, and where alpha was
    clamped); that is how the finite-difference checks hold the cutoffs
    constant.
    """
    if len(cloud) == 0:
        raise ValueError("cannot render an empty cloud")
    proj = project(cloud, cam, cov_floor)
    frozen = fragments is not None
    if frozen:
        frags = Fragments(fragments.pixels, fragments.offsets.copy(), fragments.gid.copy(),
                          fragments.clamped.copy())
    else:
        frags = _collect_fragments(proj, cloud.opacities, cam)
    n_frag = frags.gid.size
    H, W = cam.height, cam.width
    image = np.full(H * W, float(background))
    trans = np.ones(H * W)
    alpha, T, G = np.empty(n_frag), np.empty(n_frag), np.empty(n_frag)
    kept = _raster.composite(frags.pixels, frags.offsets, frags.gid, frags.clamped, frozen, W,
                             *_screen_terms(proj), cloud.opacities, cloud.intensities, float(background),
                             ALPHA_MAX, T_MIN, image, trans, alpha, T, G)
    frags.gid, frags.clamped = frags.gid[:kept], frags.clamped[:kept]
    n_contrib = np.zeros(H * W, dtype=np.int64)
    n_contrib[frags.pixels] = np.diff(frags.offsets)
    return RenderOutput(image.reshape(H, W), trans.reshape(H, W), n_contrib.reshape(H, W), frags, proj,
                        alpha[:kept], G[:kept], T[:kept])


def _quat_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. raw (unnormalized) quaternions given dL/dR."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    d = dR
    dw = 2 * (-z * d[:, 0, 1] + y * d[:, 0, 2] + z * d[:, 1, 0] - x * d[:, 1, 2]
              - y * d[:, 2, 0] + x * d[:, 2, 1])
    dx = 2 * (y * d[:, 0, 1] + z * d[:, 0, 2] + y * d[:, 1, 0] - 2 * x * d[:, 1, 1]
              - w * d[:, 1, 2] + z * d[:, 2, 0] + w * d[:, 2, 1] - 2 * x * d[:, 2, 2])
    dy = 2 * (-2 * y * d[:, 0, 0] + x * d[:, 0, 1] + w * d[:, 0, 2] + x * d[:, 1, 0]
              + z * d[:, 1, 2] - w * d[:, 2, 0] + z * d[:, 2, 1] - 2 * y * d[:, 2, 2])
    dz = 2 * (-2 * z * d[:, 0, 0] - w * d[:, 0, 1] + x * d[:, 0, 2] + w * d[:, 1, 0]
              - 2 * z * d[:, 1, 1] + y * d[:, 1, 2] + x * d[:, 2, 0] + y * d[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    return (dqn - qn * np.sum(qn * dqn, axis=1, keepdims=True)) / norm


def render_backward(cloud: GaussianCloud, cam: PinholeCamera, background: float,
                    grad_image: np.ndarray, output: RenderOutput | None = None,
                    cov_floor: float = COV_FLOOR) -> SplatGradients:
    """Reverse-mode gradients of ``sum(grad_image * image)`` w.r.t. the cloud.

    ``output`` should be the forward result for the same scene; it is
    recomputed when omitted.
    """
    if output is None:
        output = render(cloud, cam, background, cov_floor)
    n = len(cloud)
    grads = SplatGradients.zeros(n)
    frags = output.fragments
    if frags.gid.size == 0:
        return grads
    proj = output.projection
    grad_flat = np.ascontiguousarray(np.asarray(grad_image, dtype=np.float64).reshape(-1))
    d_col_n, d_op_n, d_u, d_v, d_a, d_b, d_c = (np.zeros(n) for _ in range(7))
    _raster.composite_backward(frags.pixels, frags.offsets, frags.gid, frags.clamped, output._alpha,
                               output._T, output._G, cam.width, *_screen_terms(proj), cloud.opacities,
                               cloud.intensities, float(background), grad_flat,
                               d_col_n, d_op_n, d_u, d_v, d_a, d_b, d_c)
    d_mean = np.stack([d_u, d_v], axis=1)
    d_conic = np.stack([d_a, d_b, d_c], axis=1)

    grads.intensity_logits = d_col_n * cloud.intensities * (1 - cloud.intensities)
    grads.opacity_logits = d_op_n * cloud.opacities * (1 - cloud.opacities)
    grads.means2d = d_mean

    valid = proj.valid
    # conic -> 2D covariance: dL/dCov = -Conic * dL/dConic * Conic (symmetric form)
    Cn = np.empty((n, 2, 2))
    Cn[:, 0, 0], Cn[:, 0, 1], Cn[:, 1, 0], Cn[:, 1, 1] = (
        proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 1], proj.conics[:, 2])
    Gm = np.empty((n, 2, 2))
    Gm[:, 0, 0], Gm[:, 1, 1] = d_conic[:, 0], d_conic[:, 2]
    Gm[:, 0, 1] = Gm[:, 1, 0] = 0.5 * d_conic[:, 1]
    d_cov2d = -Cn @ Gm @ Cn

    Tm = proj.J @ cam.R
    d_cov3d = np.swapaxes(Tm, 1, 2) @ d_cov2d @ Tm
    d_T = 2.0 * d_cov2d @ Tm @ proj.cov3d
    d_J = d_T @ cam.R.T

    x, y, z = proj.p_cam.T
    zs = np.where(valid, z, 1.0)
    fx, fy = cam.fx, cam.fy
    d_pc = np.zeros((n, 3))
    d_pc[:, 0] = d_mean[:, 0] * fx / zs + d_J[:, 0, 2] * (-fx / zs ** 2)
    d_pc[:, 1] = d_mean[:, 1] * fy / zs + d_J[:, 1, 2] * (-fy / zs ** 2)
    d_pc[:, 2] = (-d_mean[:, 0] * fx * x / zs ** 2 - d_mean[:, 1] * fy * y / zs ** 2
                  - d_J[:, 0, 0] * fx / zs ** 2 - d_J[:, 1, 1] * fy / zs ** 2
                  + d_J[:, 0, 2] * 2 * fx * x / zs ** 3 + d_J[:, 1, 2] * 2 * fy * y / zs ** 3)
    d_pc[~valid] = 0.0
    grads.positions = d_pc @ cam.R

    scales = cloud.scales
    M = proj.Rq * scales[:, None, :]
    d_M = 2.0 * d_cov3d @ M
    grads.log_scales = np.einsum("nij,nij->nj", proj.Rq, d_M) * scales
    grads.quats = _quat_backward(cloud.quats, d_M * scales[:, None, :])
    grads.log_scales[~valid] = 0.0
    grads.quats[~valid] = 0.0
    return grads
