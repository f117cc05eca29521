"""Patch extraction and active-patch selection.

A frame of shape (H, W, C) splits into non-overlapping P x P patches laid
out row-major: slot = row * (W // P) + col.  Each patch flattens to a
vector of length P*P*C with the channel index varying fastest, then x,
then y.  A patch is kept when its active ratio (fraction of nonzero
entries) reaches the threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .errors import DimensionNotDivisible, PositionOutOfRange, ShapeMismatch

DEFAULT_PATCH_SIZE = 16


@dataclass(frozen=True)
class PatchGrid:
    """Patch layout of a frame."""

    patch_size: int
    rows: int
    cols: int
    channels: int

    @classmethod
    def for_frame(cls, height: int, width: int, channels: int,
                  patch_size: int) -> "PatchGrid":
        if patch_size <= 0:
            raise ValueError("patch size must be positive")
        if height % patch_size or width % patch_size:
            raise DimensionNotDivisible(
                f"{height}x{width} frame not divisible by patch size {patch_size}")
        return cls(patch_size, height // patch_size, width // patch_size,
                   channels)

    @property
    def n_slots(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class PatchSet:
    """Selected patches of one frame: vectors plus their slot indices."""

    vectors: np.ndarray    # (n, P*P*C) float64
    positions: np.ndarray  # (n,) int64, strictly increasing
    grid: PatchGrid

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.grid.patch_dim:
            raise ShapeMismatch(
                f"patch vectors must be (n, {self.grid.patch_dim})")
        if self.positions.shape != (self.vectors.shape[0],):
            raise ShapeMismatch("one position per patch vector required")
        if self.positions.size:
            if int(self.positions.min()) < 0 or \
                    int(self.positions.max()) >= self.grid.n_slots:
                raise PositionOutOfRange(
                    f"positions must lie in [0, {self.grid.n_slots})")
            if np.any(np.diff(self.positions) <= 0):
                raise ValueError("positions must be strictly increasing")

    @property
    def n(self) -> int:
        return int(self.positions.shape[0])

    @property
    def active_fraction(self) -> float:
        return self.n / self.grid.n_slots


def flatten_patches(grid: np.ndarray, patch_size: int) -> np.ndarray:
    """All patch vectors of a frame, slot-ordered, shape (slots, P*P*C)."""
    h, w, c = grid.shape
    pg = PatchGrid.for_frame(h, w, c, patch_size)
    tiles = grid.reshape(pg.rows, patch_size, pg.cols, patch_size, c)
    return np.ascontiguousarray(tiles.transpose(0, 2, 1, 3, 4)).reshape(
        pg.n_slots, pg.patch_dim).astype(np.float64, copy=False)


def compute_active_ratio(vector: np.ndarray) -> float:
    """Fraction of nonzero entries in one flattened patch."""
    v = np.asarray(vector)
    if v.size == 0:
        raise ValueError("empty patch vector")
    return int(np.count_nonzero(v)) / v.size


def active_counts(grid: np.ndarray, patch_size: int) -> np.ndarray:
    """Per-slot nonzero counts as a (rows, cols) array."""
    h, w, c = grid.shape
    PatchGrid.for_frame(h, w, c, patch_size)
    return _backend.patch_nonzero_counts(
        np.ascontiguousarray(grid, dtype=np.float64), patch_size)


def select_active(grid: np.ndarray, threshold: float,
                  patch_size: int = DEFAULT_PATCH_SIZE) -> PatchSet:
    """Keep patches whose active ratio is >= threshold.

    threshold 0.0 keeps every patch (dense); threshold above 1.0 would
    keep none, so it is rejected.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    h, w, c = grid.shape
    pg = PatchGrid.for_frame(h, w, c, patch_size)
    counts = active_counts(grid, patch_size).reshape(-1)
    # same division as compute_active_ratio, so boundary cases agree
    keep = counts / pg.patch_dim >= threshold
    positions = np.flatnonzero(keep).astype(np.int64)
    vectors = flatten_patches(grid, patch_size)[positions]
    return PatchSet(vectors, positions, pg)


def scatter_patches(patch_set: PatchSet, height: int, width: int) -> np.ndarray:
    """Place patch vectors back on an all-zero frame."""
    pg = patch_set.grid
    if height != pg.rows * pg.patch_size or width != pg.cols * pg.patch_size:
        raise ShapeMismatch("frame size does not match the patch grid")
    tiles = np.zeros(
        (pg.rows, pg.cols, pg.patch_size, pg.patch_size, pg.channels))
    rows, cols = np.divmod(patch_set.positions, pg.cols)
    tiles[rows, cols] = patch_set.vectors.reshape(
        -1, pg.patch_size, pg.patch_size, pg.channels)
    return np.ascontiguousarray(
        tiles.transpose(0, 2, 1, 3, 4)).reshape(height, width, pg.channels)


# ---------------------------------------------------------------------------
# statistics

@dataclass
class ActiveHistogram:
    """Distribution of active-patch counts across frames."""

    bin_edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray     # (bins,) int64
    mean_active_fraction: float


def active_histogram(patch_sets: Sequence[PatchSet],
                     bins: int = 18) -> ActiveHistogram:
    if not patch_sets:
        raise ValueError("need at least one patch set")
    ns = np.array([ps.n for ps in patch_sets], dtype=np.int64)
    max_slots = max(ps.grid.n_slots for ps in patch_sets)
    counts, edges = np.histogram(ns, bins=bins, range=(0, max_slots + 1))
    mean_frac = float(np.mean([ps.active_fraction for ps in patch_sets]))
    return ActiveHistogram(edges, counts.astype(np.int64), mean_frac)


def write_histogram_csv(hist: ActiveHistogram, fh) -> None:
    """CSV rows ``bin_low,bin_high,count`` then a mean-fraction footer."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["bin_low", "bin_high", "count"])
    for i, count in enumerate(hist.counts):
        writer.writerow([f"{hist.bin_edges[i]:g}", f"{hist.bin_edges[i + 1]:g}",
                         int(count)])
    writer.writerow(["mean_active_fraction", f"{hist.mean_active_fraction:.6f}", ""])


def sample_threshold_mixed(rng: np.random.Generator, low: float = 0.0,
                           high: float = 0.7) -> float:
    """Per-frame training threshold drawn uniformly from [low, high]."""
    if not 0.0 <= low <= high <= 1.0:
        raise ValueError("need 0 <= low <= high <= 1")
    return float(rng.uniform(low, high))
