"""CPU throughput benchmarks.

The model benchmark times forward passes only: recordings are voxelized,
resized, normalized, and patch-selected up front, and that preprocessing
time is reported separately.  BLAS thread pools are pinned to one thread
inside the timed region so sparse and dense runs compare like for like.

The kernel benchmark races the compiled backend against the NumPy
fallback on the four hot loops.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import _backend
from .errors import EmptyDataset
from .patches import select_active
from .train import preprocess_recording
from .vit import ViTConfig, ViTParams, forward


@dataclass
class BenchResult:
    threshold: float
    n_frames: int
    repeats: int
    frames_per_second: float      # median over repeats
    per_repeat_fps: list = field(default_factory=list)
    preprocess_seconds: float = 0.0
    mean_active_fraction: float = 0.0
    mean_tokens: float = 0.0


def benchmark_forward(params: ViTParams, cfg: ViTConfig, recordings,
                      threshold: float, repeats: int = 3,
                      warmup: int = 1) -> BenchResult:
    """Median forward throughput over `repeats` timed passes."""
    if not recordings:
        raise EmptyDataset("benchmark needs at least one recording")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    t0 = time.perf_counter()
    frames = [preprocess_recording(rec, cfg) for rec in recordings]
    patch_sets = [select_active(f, threshold, cfg.patch_size) for f in frames]
    preprocess_seconds = time.perf_counter() - t0

    fps = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            for ps in patch_sets:
                forward(ps, params, cfg)
        for _ in range(repeats):
            start = time.perf_counter()
            for ps in patch_sets:
                forward(ps, params, cfg)
            elapsed = time.perf_counter() - start
            fps.append(len(patch_sets) / elapsed)
    return BenchResult(
        threshold=threshold,
        n_frames=len(patch_sets),
        repeats=repeats,
        frames_per_second=float(np.median(fps)),
        per_repeat_fps=[float(x) for x in fps],
        preprocess_seconds=preprocess_seconds,
        mean_active_fraction=float(
            np.mean([ps.active_fraction for ps in patch_sets])),
        mean_tokens=float(np.mean([ps.n + 1 for ps in patch_sets])),
    )


def benchmark_speedup(params: ViTParams, cfg: ViTConfig, recordings,
                      sparse_threshold: float, repeats: int = 3):
    """(sparse result, dense result, speedup) at the same weights."""
    sparse = benchmark_forward(params, cfg, recordings, sparse_threshold,
                               repeats)
    dense = benchmark_forward(params, cfg, recordings, 0.0, repeats)
    return sparse, dense, sparse.frames_per_second / dense.frames_per_second


# ---------------------------------------------------------------------------
# backend comparison

def _kernel_inputs(seed: int = 0):
    rng = np.random.default_rng(seed)
    h, w, c = 192, 240, 9
    n_events = 200_000
    xs = rng.integers(0, w, n_events)
    ys = rng.integers(0, h, n_events)
    pos = np.sort(rng.uniform(0.0, c - 1.0, n_events))
    pol = rng.choice([-1.0, 1.0], n_events)
    grid = np.zeros((h, w, c))
    mask = rng.random((h, w, c)) < 0.4
    grid[mask] = rng.normal(size=int(mask.sum()))
    matrix = np.array([[0.97, 0.05, 3.0], [-0.05, 0.97, -2.0]])
    return {
        "accumulate_events": (xs.astype(np.int64), ys.astype(np.int64),
                              pos, pol, h, w, c),
        "resize_bilinear": (grid, 160, 200),
        "warp_affine": (grid, matrix),
        "patch_nonzero_counts": (grid, 16),
    }


def benchmark_backends(repeats: int = 5, seed: int = 0) -> dict:
    """Per-kernel median runtimes for each available backend.

    Returns {kernel: {backend: seconds}}; backends that agree on the
    inputs by construction, so this is purely a timing comparison.
    """
    inputs = _kernel_inputs(seed)
    results: dict = {name: {} for name in _backend.KERNEL_NAMES}
    with threadpool_limits(limits=1):
        for backend_name in _backend.available_backends():
            module = _backend.get_backend(backend_name)
            for kernel in _backend.KERNEL_NAMES:
                fn = getattr(module, kernel)
                args = inputs[kernel]
                fn(*args)  # warmup
                times = []
                for _ in range(repeats):
                    start = time.perf_counter()
                    fn(*args)
                    times.append(time.perf_counter() - start)
                results[kernel][backend_name] = float(np.median(times))
    return results
