"""Shared helpers for the test suite."""

import numpy as np

from eventvit.events import EVENT_DTYPE, EventRecording


def make_recording(rng, max_events=500, width=None, height=None,
                   label=None) -> EventRecording:
    """Random well-formed recording with sorted u64 timestamps."""
    if width is None:
        width = int(rng.integers(4, 120))
    if height is None:
        height = int(rng.integers(4, 100))
    n = int(rng.integers(1, max_events + 1))
    ev = np.empty(n, dtype=EVENT_DTYPE)
    ev["x"] = rng.integers(0, width, n)
    ev["y"] = rng.integers(0, height, n)
    ev["t"] = np.sort(rng.integers(0, 1_000_000, n).astype(np.uint64))
    ev["p"] = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    return EventRecording(ev, width, height, label=label)
