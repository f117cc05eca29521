"""Pure-NumPy kernels for the per-event and per-pixel hot loops.

Mirrors the API of the compiled module.  Results agree with the compiled
kernels bit-for-bit: the event scatter feeds one in-order ``np.add.at``
with interleaved low/high deposits, so cells shared by several events
accumulate in the same order as the compiled per-event loop.
"""

from __future__ import annotations

import numpy as np


def accumulate_events(xs, ys, channel_pos, polarities, height: int,
                      width: int, channels: int) -> np.ndarray:
    """Bilinear scatter of signed events along the channel axis.

    ``channel_pos`` holds each event's fractional channel coordinate in
    [0, channels-1].  Each event deposits (1-frac) of its polarity at
    floor(pos) and frac at floor(pos)+1.
    """
    grid = np.zeros((height, width, channels), dtype=np.float64)
    n = len(xs)
    if n == 0:
        return grid
    lo = np.floor(channel_pos).astype(np.int64)
    np.clip(lo, 0, channels - 1, out=lo)
    frac = channel_pos - lo
    flat = grid.reshape(-1)
    base = (ys.astype(np.int64) * width + xs.astype(np.int64)) * channels
    pol = polarities.astype(np.float64)
    # one add.at call with [lo_0, hi_0, lo_1, hi_1, ...] keeps the deposit
    # order identical to the compiled per-event loop
    idx = np.empty(2 * n, dtype=np.int64)
    val = np.empty(2 * n, dtype=np.float64)
    idx[0::2] = base + lo
    idx[1::2] = base + lo + 1
    val[0::2] = (1.0 - frac) * pol
    val[1::2] = frac * pol
    keep = np.ones(2 * n, dtype=bool)
    keep[1::2] = lo + 1 < channels
    np.add.at(flat, idx[keep], val[keep])
    return grid


def resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centres, clamped at the borders."""
    h, w, c = grid.shape
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = sy - y0
    wx = sx - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    g00 = grid[y0c[:, None], x0c[None, :]]
    g01 = grid[y0c[:, None], x1c[None, :]]
    g10 = grid[y1c[:, None], x0c[None, :]]
    g11 = grid[y1c[:, None], x1c[None, :]]
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    return (1.0 - wy) * ((1.0 - wx) * g00 + wx * g01) \
        + wy * ((1.0 - wx) * g10 + wx * g11)


def warp_affine(grid: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Inverse-map affine warp with bilinear sampling and zero fill.

    ``matrix`` is the 2x3 output-to-source map:
    src_x = m00*x + m01*y + m02, src_y = m10*x + m11*y + m12.
    """
    h, w, c = grid.shape
    oy, ox = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = matrix[0, 0] * ox + matrix[0, 1] * oy + matrix[0, 2]
    sy = matrix[1, 0] * ox + matrix[1, 1] * oy + matrix[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros_like(grid)
    for dy_i in (0, 1):
        for dx_i in (0, 1):
            yi = y0 + dy_i
            xi = x0 + dx_i
            ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            weight = (wy if dy_i else 1.0 - wy) * (wx if dx_i else 1.0 - wx)
            weight = np.where(ok, weight, 0.0)
            vals = grid[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += weight[:, :, None] * vals
    return out


def patch_nonzero_counts(grid: np.ndarray, patch_size: int) -> np.ndarray:
    """Nonzero-entry count per patch, as a (rows, cols) int64 array."""
    h, w, c = grid.shape
    rows, cols = h // patch_size, w // patch_size
    tiles = grid.reshape(rows, patch_size, cols, patch_size, c)
    return np.count_nonzero(tiles, axis=(1, 3, 4)).astype(np.int64)
