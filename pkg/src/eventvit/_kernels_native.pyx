# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-event and per-pixel hot loops.

Same API and arithmetic as the NumPy fallback module; per-element operation
order matches, including the deposit order of the event scatter, so the two
backends agree bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def accumulate_events(const cnp.int64_t[::1] xs, const cnp.int64_t[::1] ys,
                      const double[::1] channel_pos, const double[::1] polarities,
                      int height, int width, int channels):
    """Bilinear scatter of signed events along the channel axis."""
    out = np.zeros((height, width, channels), dtype=np.float64)
    cdef double[:, :, ::1] grid = out
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef Py_ssize_t lo
    cdef double pos, frac, pol
    for i in range(n):
        pos = channel_pos[i]
        lo = <Py_ssize_t>floor(pos)
        if lo < 0:
            lo = 0
        elif lo > channels - 1:
            lo = channels - 1
        frac = pos - lo
        pol = polarities[i]
        grid[ys[i], xs[i], lo] += (1.0 - frac) * pol
        if lo + 1 < channels:
            grid[ys[i], xs[i], lo + 1] += frac * pol
    return out


def resize_bilinear(const double[:, :, ::1] grid, int out_h, int out_w):
    """Bilinear resample with half-pixel centres, clamped at the borders."""
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1], c = grid.shape[2]
    out = np.empty((out_h, out_w, c), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef double scale_y = h / <double>out_h
    cdef double scale_x = w / <double>out_w
    cdef Py_ssize_t oy, ox, ch, y0, x0, y0c, y1c, x0c, x1c
    cdef double sy, sx, wy, wx, v0, v1
    for oy in range(out_h):
        sy = (oy + 0.5) * scale_y - 0.5
        y0 = <Py_ssize_t>floor(sy)
        wy = sy - y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for ox in range(out_w):
            sx = (ox + 0.5) * scale_x - 0.5
            x0 = <Py_ssize_t>floor(sx)
            wx = sx - x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for ch in range(c):
                v0 = (1.0 - wx) * grid[y0c, x0c, ch] + wx * grid[y0c, x1c, ch]
                v1 = (1.0 - wx) * grid[y1c, x0c, ch] + wx * grid[y1c, x1c, ch]
                dst[oy, ox, ch] = (1.0 - wy) * v0 + wy * v1
    return out


def warp_affine(const double[:, :, ::1] grid, const double[:, ::1] matrix):
    """Inverse-map affine warp with bilinear sampling and zero fill."""
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1], c = grid.shape[2]
    out = np.zeros((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef double m00 = matrix[0, 0], m01 = matrix[0, 1], m02 = matrix[0, 2]
    cdef double m10 = matrix[1, 0], m11 = matrix[1, 1], m12 = matrix[1, 2]
    cdef Py_ssize_t oy, ox, ch, x0, y0
    cdef double sx, sy, wx, wy, w00, w01, w10, w11, acc
    cdef bint ok00, ok01, ok10, ok11
    for oy in range(h):
        for ox in range(w):
            sx = m00 * ox + m01 * oy + m02
            sy = m10 * ox + m11 * oy + m12
            x0 = <Py_ssize_t>floor(sx)
            y0 = <Py_ssize_t>floor(sy)
            wx = sx - x0
            wy = sy - y0
            ok00 = 0 <= y0 < h and 0 <= x0 < w
            ok01 = 0 <= y0 < h and 0 <= x0 + 1 < w
            ok10 = 0 <= y0 + 1 < h and 0 <= x0 < w
            ok11 = 0 <= y0 + 1 < h and 0 <= x0 + 1 < w
            w00 = (1.0 - wy) * (1.0 - wx) if ok00 else 0.0
            w01 = (1.0 - wy) * wx if ok01 else 0.0
            w10 = wy * (1.0 - wx) if ok10 else 0.0
            w11 = wy * wx if ok11 else 0.0
            for ch in range(c):
                acc = 0.0
                if ok00:
                    acc += w00 * grid[y0, x0, ch]
                if ok01:
                    acc += w01 * grid[y0, x0 + 1, ch]
                if ok10:
                    acc += w10 * grid[y0 + 1, x0, ch]
                if ok11:
                    acc += w11 * grid[y0 + 1, x0 + 1, ch]
                dst[oy, ox, ch] = acc
    return out


def patch_nonzero_counts(const double[:, :, ::1] grid, int patch_size):
    """Nonzero-entry count per patch, as a (rows, cols) int64 array."""
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1], c = grid.shape[2]
    cdef Py_ssize_t rows = h // patch_size, cols = w // patch_size
    out = np.zeros((rows, cols), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] dst = out
    cdef Py_ssize_t r, col, py, px, ch
    cdef cnp.int64_t count
    for r in range(rows):
        for col in range(cols):
            count = 0
            for py in range(r * patch_size, (r + 1) * patch_size):
                for px in range(col * patch_size, (col + 1) * patch_size):
                    for ch in range(c):
                        if grid[py, px, ch] != 0.0:
                            count += 1
            dst[r, col] = count
    return out
