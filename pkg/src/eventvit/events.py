"""Event stream containers and IO.

An event is (x, y, t, p): pixel coordinates, a microsecond timestamp, and a
polarity of +1 (brightness increase) or -1 (decrease).  Recordings keep
events in non-decreasing timestamp order.

Two interchange formats are supported:

* text: header line ``x,y,t,p`` then one comma-separated event per line;
* binary: magic ``EVT1``, u16 width, u16 height, u64 event count, then a
  packed 13-byte record per event (u16 x, u16 y, u64 t, i8 p, little
  endian, no padding).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    EmptyDataset,
    MalformedLine,
    NonMonotoneTimestamp,
    OutOfBounds,
    TruncatedPayload,
)

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
assert EVENT_DTYPE.itemsize == 13  # packed, no padding

_MAGIC = b"EVT1"
_HEADER = struct.Struct("<4sHHQ")
TEXT_HEADER = "x,y,t,p"


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(eq=False)
class EventRecording:
    """Events plus sensor geometry; optionally a class label."""

    events: np.ndarray
    sensor_width: int
    sensor_height: int
    label: int | None = None

    def __post_init__(self):
        ev = np.asarray(self.events)
        if ev.dtype != EVENT_DTYPE:
            ev = np.array(
                [tuple(e) for e in self.events] if len(self.events) else [],
                dtype=EVENT_DTYPE,
            )
        self.events = ev
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ValueError("sensor dimensions must be positive")
        _validate_fields(ev["x"], ev["y"], ev["t"], ev["p"],
                         self.sensor_width, self.sensor_height)

    @classmethod
    def from_events(cls, events: Iterable[Event], sensor_width: int,
                    sensor_height: int, label: int | None = None) -> "EventRecording":
        arr = np.array([tuple(e) for e in events], dtype=EVENT_DTYPE)
        return cls(arr, sensor_width, sensor_height, label)

    @property
    def num_events(self) -> int:
        return int(self.events.shape[0])

    @property
    def duration_us(self) -> int:
        if self.num_events == 0:
            return 0
        return int(self.events["t"][-1]) - int(self.events["t"][0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventRecording):
            return NotImplemented
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and self.label == other.label
            and np.array_equal(self.events, other.events)
        )


def _validate_fields(xs, ys, ts, ps, width, height) -> None:
    if xs.size == 0:
        return
    if int(xs.max()) >= width or int(ys.max()) >= height:
        raise OutOfBounds(f"coordinate outside {width}x{height} sensor")
    # compare, don't diff: u64 subtraction wraps on decreasing pairs
    if np.any(ts[1:] < ts[:-1]):
        raise NonMonotoneTimestamp("timestamps must be non-decreasing")
    if not np.all((ps == 1) | (ps == -1)):
        raise ValueError("polarity must be +1 or -1")


# ---------------------------------------------------------------------------
# text format

def parse_text_recording(source, sensor_width: int, sensor_height: int,
                         label: int | None = None) -> EventRecording:
    """Parse the text format.  Blank lines are ignored.

    Raises MalformedLine, NonMonotoneTimestamp, or OutOfBounds with the
    offending 1-based line number (the header is line 1).
    """
    if hasattr(source, "read"):
        source = source.read()
    rows = []
    prev_t = -1
    header_seen = False
    for line_no, raw in enumerate(str(source).split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if not header_seen:
            if line != TEXT_HEADER:
                raise MalformedLine(f"expected header '{TEXT_HEADER}'", line_no)
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedLine("expected 4 comma-separated fields", line_no)
        try:
            x, y, t, p = (int(part) for part in parts)
        except ValueError:
            raise MalformedLine("fields must be integers", line_no) from None
        if p not in (1, -1):
            raise MalformedLine(f"polarity must be 1 or -1, got {p}", line_no)
        if t < 0 or t > 0xFFFF_FFFF_FFFF_FFFF:
            raise MalformedLine("timestamp outside u64 range", line_no)
        if not (0 <= x < sensor_width and 0 <= y < sensor_height):
            raise OutOfBounds(
                f"({x},{y}) outside {sensor_width}x{sensor_height} sensor", line_no)
        if t < prev_t:
            raise NonMonotoneTimestamp(f"{t} after {prev_t}", line_no)
        prev_t = t
        rows.append((x, y, t, p))
    if not header_seen:
        raise MalformedLine(f"expected header '{TEXT_HEADER}'", 1)
    arr = np.array(rows, dtype=EVENT_DTYPE)
    return EventRecording(arr, sensor_width, sensor_height, label)


def write_text_recording(rec: EventRecording) -> str:
    lines = [TEXT_HEADER]
    for ev in rec.events:
        lines.append(f"{ev['x']},{ev['y']},{ev['t']},{ev['p']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# binary format

def write_binary(rec: EventRecording) -> bytes:
    header = _HEADER.pack(_MAGIC, rec.sensor_width, rec.sensor_height,
                          rec.num_events)
    return header + rec.events.tobytes()


def read_binary(data: bytes, label: int | None = None) -> EventRecording:
    if len(data) < _HEADER.size:
        raise TruncatedPayload(
            f"need {_HEADER.size} header bytes, got {len(data)}")
    magic, width, height, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise BadMagic(f"expected {_MAGIC!r}, got {magic!r}")
    body = data[_HEADER.size:]
    expected = count * EVENT_DTYPE.itemsize
    if len(body) < expected:
        raise TruncatedPayload(
            f"header declares {count} events ({expected} bytes), "
            f"payload has {len(body)}")
    if len(body) > expected:
        raise CountMismatch(
            f"{len(body) - expected} trailing bytes beyond {count} declared events")
    events = np.frombuffer(body, dtype=EVENT_DTYPE).copy()
    return EventRecording(events, width, height, label)


def read_recording(path, label: int | None = None) -> EventRecording:
    """Read a binary event file from disk."""
    with open(path, "rb") as fh:
        return read_binary(fh.read(), label=label)


def write_recording(path, rec: EventRecording) -> None:
    with open(path, "wb") as fh:
        fh.write(write_binary(rec))


# ---------------------------------------------------------------------------
# synthetic recordings

NUM_SYNTH_CLASSES = 3
_SYNTH_NAMES = ("bar", "disc", "cross")
# shape size and drift length as fractions of the short sensor side
_SHAPE_RADIUS_FRAC = 0.35
_TRAVEL_FRAC = 0.12


def synth_recording(class_id: int, seed: int, width: int = 64, height: int = 64,
                    duration_us: int = 250_000,
                    event_rate: float = 60_000.0) -> EventRecording:
    """Deterministic moving-shape recording for one of three classes.

    Class 0 fills a tall bar, 1 a disc, 2 a cross.  The shape drifts
    across the sensor over the recording; events on the leading side
    (offset pointing along the motion) get polarity +1, trailing -1.
    """
    if class_id not in range(NUM_SYNTH_CLASSES):
        raise ValueError(f"class_id must be in [0, {NUM_SYNTH_CLASSES})")
    if width < 32 or height < 32:
        raise ValueError("sensor must be at least 32x32")
    if duration_us <= 0 or event_rate <= 0:
        raise ValueError("duration and event rate must be positive")

    n = int(round(event_rate * duration_us / 1e6))
    if n == 0:
        return EventRecording(np.empty(0, dtype=EVENT_DTYPE), width, height,
                              label=class_id)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(class_id,)))

    if n == 1:
        ts = np.zeros(1, dtype=np.int64)
    else:
        ts = (np.arange(n, dtype=np.int64) * duration_us) // (n - 1)

    radius = _SHAPE_RADIUS_FRAC * min(width, height)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    travel = _TRAVEL_FRAC * min(width, height)
    dx, dy = travel * np.cos(angle), travel * np.sin(angle)
    # trajectory centred on the frame with a small placement jitter; the
    # clip below catches the rare jittered event that pokes past the edge
    cx0 = (width - 1) / 2.0 - dx / 2.0 + rng.uniform(-0.005, 0.005) * width
    cy0 = (height - 1) / 2.0 - dy / 2.0 + rng.uniform(-0.005, 0.005) * height

    u = rng.random(n)
    v = rng.random(n)
    ox, oy = _shape_offsets(class_id, u, v, radius)
    jitter = rng.normal(0.0, 0.5, size=(2, n))
    frac = ts / ts[-1] if ts[-1] > 0 else np.zeros(n)
    px = cx0 + frac * dx + ox + jitter[0]
    py = cy0 + frac * dy + oy + jitter[1]
    xs = np.clip(np.rint(px), 0, width - 1).astype(np.uint16)
    ys = np.clip(np.rint(py), 0, height - 1).astype(np.uint16)
    ps = np.where(ox * dx + oy * dy >= 0.0, 1, -1).astype(np.int8)

    events = np.empty(n, dtype=EVENT_DTYPE)
    events["x"], events["y"], events["t"], events["p"] = xs, ys, ts, ps
    return EventRecording(events, width, height, label=class_id)


def _shape_offsets(class_id: int, u: np.ndarray, v: np.ndarray, r: float):
    """Offsets from the shape centre, filling the shape's interior."""
    if class_id == 0:  # tall filled bar
        return (2.0 * u - 1.0) * 0.4 * r, (2.0 * v - 1.0) * r
    if class_id == 1:  # filled disc, area-uniform
        rad = r * np.sqrt(u)
        th = 2.0 * np.pi * v
        return rad * np.cos(th), rad * np.sin(th)
    # cross: two filled strokes
    horizontal = u < 0.5
    s = np.where(horizontal, 2.0 * u, 2.0 * u - 1.0)
    along = (2.0 * s - 1.0) * r
    across = (2.0 * v - 1.0) * 0.35 * r
    ox = np.where(horizontal, along, across)
    oy = np.where(horizontal, across, along)
    return ox, oy


# ---------------------------------------------------------------------------
# on-disk datasets

@dataclass
class Dataset:
    """Recordings with integer labels derived from class subdirectories."""

    recordings: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.recordings)


def load_directory_dataset(root) -> Dataset:
    """Load ``root/<class_name>/*.evt`` into a labelled dataset.

    Class names are sorted lexically and mapped to labels 0..K-1.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise EmptyDataset(f"{root} is not a directory")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    recordings = []
    for label, name in enumerate(class_names):
        cls_dir = os.path.join(root, name)
        for fname in sorted(os.listdir(cls_dir)):
            if fname.endswith(".evt"):
                recordings.append(
                    read_recording(os.path.join(cls_dir, fname), label=label))
    if not recordings:
        raise EmptyDataset(f"no .evt files under {root}")
    return Dataset(recordings, class_names)


def save_directory_dataset(root, recordings: Sequence[EventRecording],
                           class_names: Sequence[str]) -> None:
    """Write recordings into ``root/<class_name>/NNNN.evt`` by label."""
    root = os.fspath(root)
    counters = [0] * len(class_names)
    for rec in recordings:
        if rec.label is None or not (0 <= rec.label < len(class_names)):
            raise ValueError("recording label outside class_names")
        cls_dir = os.path.join(root, class_names[rec.label])
        os.makedirs(cls_dir, exist_ok=True)
        write_recording(
            os.path.join(cls_dir, f"{counters[rec.label]:04d}.evt"), rec)
        counters[rec.label] += 1
