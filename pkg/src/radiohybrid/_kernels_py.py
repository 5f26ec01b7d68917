"""NumPy implementations of the per-pixel kernels.

Same signatures and arithmetic as the compiled ``_kernels`` extension; used
when the extension is not built or ``RADIOHYBRID_PURE=1`` is set.
"""
from __future__ import annotations

import numpy as np

# coordinates this far outside the raster still count as inside (zero-fill mode)
EDGE_TOL = 1e-9


def bilinear_sample(img: np.ndarray, sy: np.ndarray, sx: np.ndarray, zero_fill: bool) -> np.ndarray:
    """Sample ``img`` at float coordinates ``(sy, sx)``.

    With ``zero_fill`` points outside ``[0, H-1] x [0, W-1]`` return 0;
    otherwise coordinates are clamped to the raster.
    """
    h, w = img.shape
    sy = np.asarray(sy, dtype=np.float64)
    sx = np.asarray(sx, dtype=np.float64)
    if zero_fill:
        inside = (sy >= -EDGE_TOL) & (sy <= h - 1 + EDGE_TOL) & (sx >= -EDGE_TOL) & (sx <= w - 1 + EDGE_TOL)
    sy = np.clip(sy, 0.0, h - 1)
    sx = np.clip(sx, 0.0, w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy = sy - y0
    fx = sx - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    out = top + fy * (bot - top)
    if zero_fill:
        out = np.where(inside, out, 0.0)
    return out


def lbp_codes(img: np.ndarray, dy: np.ndarray, dx: np.ndarray, radius: int) -> np.ndarray:
    """LBP code of every pixel at least ``radius`` away from the border."""
    h, w = img.shape
    r = radius
    oh, ow = h - 2 * r, w - 2 * r
    center = img[r : r + oh, r : r + ow]
    codes = np.zeros((oh, ow), dtype=np.int64)
    for p in range(len(dy)):
        iy = int(np.floor(dy[p]))
        ix = int(np.floor(dx[p]))
        fy = dy[p] - iy
        fx = dx[p] - ix
        # the +1 neighbour is only read when its weight is non-zero
        iy1 = iy + 1 if fy > 0.0 else iy
        ix1 = ix + 1 if fx > 0.0 else ix
        a = img[r + iy : r + iy + oh, r + ix : r + ix + ow]
        b = img[r + iy : r + iy + oh, r + ix1 : r + ix1 + ow]
        c = img[r + iy1 : r + iy1 + oh, r + ix : r + ix + ow]
        d = img[r + iy1 : r + iy1 + oh, r + ix1 : r + ix1 + ow]
        top = a + fx * (b - a)
        bot = c + fx * (d - c)
        g = top + fy * (bot - top)
        codes |= (g - center >= 0.0).astype(np.int64) << p
    return codes


def hog_cell_histograms(
    mag: np.ndarray, bin_lo: np.ndarray, frac_hi: np.ndarray, cell: int, nbins: int
) -> np.ndarray:
    """Accumulate magnitude into per-cell orientation histograms.

    Each pixel splits ``mag`` between bin ``bin_lo`` (weight ``1 - frac_hi``)
    and the circularly next bin (weight ``frac_hi``). Only whole cells are
    used. Returns ``[cells_y, cells_x, nbins]``.
    """
    cy, cx = mag.shape[0] // cell, mag.shape[1] // cell
    hist = np.zeros((cy, cx, nbins), dtype=np.float64)
    if cy == 0 or cx == 0:
        return hist
    m = mag[: cy * cell, : cx * cell]
    lo = bin_lo[: cy * cell, : cx * cell]
    fr = frac_hi[: cy * cell, : cx * cell]
    rows = np.arange(cy * cell) // cell
    cols = np.arange(cx * cell) // cell
    cell_id = (rows[:, None] * cx + cols[None, :]) * nbins
    hi = (lo + 1) % nbins
    flat = np.bincount((cell_id + lo).ravel(), (m * (1.0 - fr)).ravel(), cy * cx * nbins)
    flat += np.bincount((cell_id + hi).ravel(), (m * fr).ravel(), cy * cx * nbins)
    return flat.reshape(cy, cx, nbins)


def adam_update(p, g, m, v, lr, b1, b2, c1, c2, eps, decay) -> None:
    """In-place Adam update on flat float64 arrays (``decay`` is ``lr * weight_decay``)."""
    scratch = np.multiply(g, 1.0 - b1)
    m *= b1
    m += scratch
    np.multiply(g, g, out=scratch)
    scratch *= 1.0 - b2
    v *= b2
    v += scratch
    np.divide(v, c2, out=scratch)
    np.sqrt(scratch, out=scratch)
    scratch += eps
    np.divide(m, scratch, out=scratch)
    scratch *= lr / c1
    if decay != 0.0:
        p *= 1.0 - decay
    p -= scratch
