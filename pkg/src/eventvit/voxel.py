"""Voxel-grid frames: build, resize-pad, normalize, augment, dump.

A voxel grid is an (H, W, C) float64 array.  Each event spreads its
polarity over the two temporal channels nearest to its scaled timestamp
with bilinear weights, so the grid's total mass equals the recording's
polarity sum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import EmptyRecording, TruncatedPayload
from .events import EventRecording

FRAME_HEIGHT = 192
FRAME_WIDTH = 240


def build_voxel_grid(rec: EventRecording, channels: int) -> np.ndarray:
    """Accumulate a recording into an (H, W, C) grid.

    Timestamps are mapped to channel coordinates s = (t - t_first) * (C-1)
    / (t_last - t_first); an event deposits (1 - frac(s)) at floor(s) and
    frac(s) at floor(s)+1.  A recording whose events share one timestamp
    puts its whole mass in channel 0.
    """
    if channels < 2:
        raise ValueError("need at least 2 channels")
    if rec.num_events == 0:
        raise EmptyRecording("cannot voxelize a recording with no events")
    ts = rec.events["t"].astype(np.float64)
    span = ts[-1] - ts[0]
    if span == 0.0:
        pos = np.zeros(rec.num_events, dtype=np.float64)
    else:
        pos = ((ts - ts[0]) * (channels - 1)) / span
    xs = np.ascontiguousarray(rec.events["x"], dtype=np.int64)
    ys = np.ascontiguousarray(rec.events["y"], dtype=np.int64)
    ps = np.ascontiguousarray(rec.events["p"], dtype=np.float64)
    return _backend.accumulate_events(xs, ys, pos, ps,
                                      rec.sensor_height, rec.sensor_width,
                                      channels)


def resize_pad(grid: np.ndarray, target_h: int = FRAME_HEIGHT,
               target_w: int = FRAME_WIDTH) -> np.ndarray:
    """Scale to fit inside the target while keeping aspect ratio, then
    zero-pad on the bottom and right edges."""
    h, w, c = grid.shape
    if h <= 0 or w <= 0:
        raise ValueError("empty grid")
    scale = min(target_h / h, target_w / w)
    new_h = max(1, min(target_h, round(h * scale)))
    new_w = max(1, min(target_w, round(w * scale)))
    if (new_h, new_w) == (h, w):
        resized = np.asarray(grid, dtype=np.float64)
    else:
        resized = _backend.resize_bilinear(
            np.ascontiguousarray(grid, dtype=np.float64), new_h, new_w)
    if (new_h, new_w) == (target_h, target_w):
        return np.array(resized, copy=True)
    out = np.zeros((target_h, target_w, c), dtype=np.float64)
    out[:new_h, :new_w] = resized
    return out


def normalize_nonzero(grid: np.ndarray) -> np.ndarray:
    """Standardize the nonzero entries in place of their raw values.

    Mean and population standard deviation are taken over nonzero entries
    only; zero cells stay zero.  A frame whose nonzero entries are all
    (nearly) equal comes back all-zero rather than amplifying noise.
    """
    out = np.array(grid, dtype=np.float64, copy=True)
    mask = out != 0.0
    vals = out[mask]
    if vals.size == 0:
        return out
    mean = vals.mean()
    std = vals.std()
    if std < 1e-8:
        out[mask] = 0.0
    else:
        out[mask] = (vals - mean) / std
    return out


@dataclass(frozen=True)
class AugmentParams:
    """One sampled augmentation: optional mirror, rotation, translation."""

    flip: bool
    angle_deg: float
    shift_x: float
    shift_y: float


def sample_augment_params(rng: np.random.Generator, grid_shape) -> AugmentParams:
    h, w = grid_shape[0], grid_shape[1]
    flip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-15.0, 15.0))
    shift_x = float(rng.uniform(-0.1, 0.1) * w)
    shift_y = float(rng.uniform(-0.1, 0.1) * h)
    return AugmentParams(flip, angle, shift_x, shift_y)


def apply_augment(grid: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Mirror horizontally, rotate about the centre, then translate.

    Implemented as one inverse-mapped affine warp with bilinear sampling;
    samples falling outside the frame read as zero.
    """
    h, w, _ = grid.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def mat(a, b, tx, c, d, ty):
        return np.array([[a, b, tx], [c, d, ty], [0.0, 0.0, 1.0]])

    flip_m = mat(-1.0, 0.0, w - 1.0, 0.0, 1.0, 0.0) if params.flip \
        else np.eye(3)
    th = np.deg2rad(params.angle_deg)
    cos_t, sin_t = np.cos(th), np.sin(th)
    rot_m = (mat(1.0, 0.0, cx, 0.0, 1.0, cy)
             @ mat(cos_t, -sin_t, 0.0, sin_t, cos_t, 0.0)
             @ mat(1.0, 0.0, -cx, 0.0, 1.0, -cy))
    shift_m = mat(1.0, 0.0, params.shift_x, 0.0, 1.0, params.shift_y)
    forward = shift_m @ rot_m @ flip_m
    inverse = np.linalg.inv(forward)[:2]
    return _backend.warp_affine(
        np.ascontiguousarray(grid, dtype=np.float64),
        np.ascontiguousarray(inverse, dtype=np.float64))


def augment(grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample augmentation parameters from ``rng`` and apply them."""
    return apply_augment(grid, sample_augment_params(rng, grid.shape))


# ---------------------------------------------------------------------------
# grid dump format: u32 H, u32 W, u32 C (little endian), then H*W*C
# float32 values in row-major (y, x, c) order.

_DUMP_HEADER = struct.Struct("<III")


def write_grid(grid: np.ndarray) -> bytes:
    h, w, c = grid.shape
    payload = np.ascontiguousarray(grid, dtype="<f4").tobytes()
    return _DUMP_HEADER.pack(h, w, c) + payload


def read_grid(data: bytes) -> np.ndarray:
    if len(data) < _DUMP_HEADER.size:
        raise TruncatedPayload("grid dump shorter than its header")
    h, w, c = _DUMP_HEADER.unpack_from(data)
    body = data[_DUMP_HEADER.size:]
    expected = h * w * c * 4
    if len(body) != expected:
        raise TruncatedPayload(
            f"grid dump payload is {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).copy()


def write_grid_file(path, grid: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(write_grid(grid))


def read_grid_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_grid(fh.read())
