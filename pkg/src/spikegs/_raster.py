"""Compiled per-pixel loops of the rasterizer.

Everything here works on flat arrays: per-Gaussian screen-space terms indexed
by Gaussian id and per-fragment arrays grouped into per-pixel segments.  The
loops are serial, so gradient accumulation into shared per-Gaussian buffers is
deterministic.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _row_span(u, v, a, b, c, r2, y, width):
    """Integer x-range of the ellipse ``maha <= r2`` on pixel row ``y``."""
    dy = y - v
    disc = b * b * dy * dy - a * (c * dy * dy - r2)
    if disc < 0.0:
        return 0, -1
    half = np.sqrt(disc) / a
    mid = u - b * dy / a
    x0 = max(int(np.ceil(mid - half - 1e-9)), 0)
    x1 = min(int(np.floor(mid + half + 1e-9)), width - 1)
    return x0, x1


@numba.njit(cache=True)
def bin_fragments(order, mx, my, ca, cb, cc, cov_yy, r2, width, height):
    """Per-pixel lists of the Gaussians whose Mahalanobis radius is within ``r2``.

    ``order`` lists candidate Gaussians front to back.  A counting sort by
    pixel keeps that order inside every list.

    Returns:
        ``(offsets, gid)`` with pixel ``p`` owning ``gid[offsets[p]:offsets[p + 1]]``.
    """
    n_pix = width * height
    counts = np.zeros(n_pix + 1, dtype=np.int64)
    for write in range(2):
        if write:
            for p in range(n_pix):
                counts[p + 1] += counts[p]
            offsets = counts.copy()
            gid = np.empty(counts[n_pix], dtype=np.int64)
            cursor = counts[:n_pix].copy()
        for i in range(order.size):
            g = order[i]
            u, v, a, b, c = mx[g], my[g], ca[g], cb[g], cc[g]
            ey = np.sqrt(r2[g] * cov_yy[g])
            y0 = max(int(np.ceil(v - ey)), 0)
            y1 = min(int(np.floor(v + ey)), height - 1)
            for y in range(y0, y1 + 1):
                x0, x1 = _row_span(u, v, a, b, c, r2[g], y, width)
                dy = y - v
                for x in range(x0, x1 + 1):
                    dx = x - u
                    maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                    if maha > r2[g]:
                        continue
                    p = y * width + x
                    if write:
                        gid[cursor[p]] = g
                        cursor[p] += 1
                    else:
                        counts[p + 1] += 1
    return offsets, gid


@numba.njit(cache=True)
def composite(pixels, offsets, gid, clamped, frozen, width, mx, my, ca, cb, cc, opac, color,
              background, alpha_max, t_min, image, trans, alpha, T, G):
    """Front-to-back alpha compositing of every pixel's fragment list.

    With ``frozen`` the lists and clamp flags are used as given.  Otherwise
    alpha is clamped at ``alpha_max`` (recorded in ``clamped``) and a list is
    cut where transmittance would drop below ``t_min``; the surviving prefixes
    are compacted in place.

    Returns:
        The number of fragments kept; ``offsets`` is rewritten to match.
    """
    w = 0
    start = offsets[0]
    for r in range(pixels.size):
        end = offsets[r + 1]
        p = pixels[r]
        px = p % width
        py = p // width
        t_acc = 1.0
        c_acc = 0.0
        for j in range(start, end):
            g = gid[j]
            dx = px - mx[g]
            dy = py - my[g]
            falloff = np.exp(-0.5 * (ca[g] * dx * dx + 2.0 * cb[g] * dx * dy + cc[g] * dy * dy))
            if frozen:
                a = alpha_max if clamped[j] else opac[g] * falloff
                is_clamped = clamped[j]
            else:
                a = opac[g] * falloff
                is_clamped = a > alpha_max
                if is_clamped:
                    a = alpha_max
                if t_acc * (1.0 - a) < t_min:
                    break
            gid[w] = g
            clamped[w] = is_clamped
            alpha[w] = a
            T[w] = t_acc
            G[w] = falloff
            w += 1
            c_acc += color[g] * a * t_acc
            t_acc *= 1.0 - a
        image[p] = c_acc + t_acc * background
        trans[p] = t_acc
        start = end
        offsets[r + 1] = w
    return w


@numba.njit(cache=True)
def composite_backward(pixels, offsets, gid, clamped, alpha, T, G, width, mx, my, ca, cb, cc, opac,
                       color, background, grad_image, d_color, d_opac, d_u, d_v, d_a, d_b, d_c):
    """Accumulate per-Gaussian gradients of ``sum(grad_image * image)``.

    Each list is walked back to front carrying the light that arrives from
    behind the current fragment.
    """
    for r in range(pixels.size):
        lo, hi = offsets[r], offsets[r + 1]
        if hi == lo:
            continue
        p = pixels[r]
        gp = grad_image[p]
        if gp == 0.0:
            continue
        px = p % width
        py = p // width
        behind = T[hi - 1] * (1.0 - alpha[hi - 1]) * background
        for j in range(hi - 1, lo - 1, -1):
            g = gid[j]
            a = alpha[j]
            t = T[j]
            d_color[g] += gp * a * t
            if not clamped[j]:
                d_alpha = gp * (t * color[g] - behind / (1.0 - a))
                d_opac[g] += d_alpha * G[j]
                d_maha = -0.5 * d_alpha * opac[g] * G[j]
                dx = px - mx[g]
                dy = py - my[g]
                d_u[g] += -2.0 * d_maha * (ca[g] * dx + cb[g] * dy)
                d_v[g] += -2.0 * d_maha * (cb[g] * dx + cc[g] * dy)
                d_a[g] += d_maha * dx * dx
                d_b[g] += d_maha * 2.0 * dx * dy
                d_c[g] += d_maha * dy * dy
            behind += color[g] * a * t
