"""Event streams: synthetic generation, text serialization, frame binning.

An event is (timestamp in microseconds, x, y, polarity).  Records are
accumulated into a fixed number of uniform time bins per polarity and
binarized, which is the only preprocessing the encoder sees.  Vendor
formats are out of scope; converters should target the text format below.

Text format, one record per block:

    # record label=<int> w=<int> h=<int> dur_us=<int>
    <timestamp_us> <x> <y> <polarity>
    ...

A blank line (or end of file) closes the record.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import SeededRng

__all__ = [
    "Event",
    "EventRecord",
    "FrameTensor",
    "EventFormatError",
    "SyntheticConfig",
    "class_rate_map",
    "generate_synthetic",
    "synthetic_records",
    "events_to_frames",
    "frames_to_inputs",
    "save_events",
    "load_events",
]


class EventFormatError(ValueError):
    """Raised on malformed event text, with the offending line number."""


@dataclass(frozen=True)
class Event:
    timestamp_us: int
    x: int
    y: int
    polarity: int


@dataclass
class EventRecord:
    """One labelled event stream with its sensor geometry and duration."""

    events: list[Event]
    label: int
    width: int
    height: int
    duration_us: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.duration_us < 1:
            raise ValueError("geometry and duration must be positive")
        if self.label < 0:
            raise ValueError("label must be non-negative")
        prev = -1
        for i, ev in enumerate(self.events):
            if not 0 <= ev.x < self.width or not 0 <= ev.y < self.height:
                raise ValueError(f"event {i} at ({ev.x}, {ev.y}) is off-sensor")
            if ev.polarity not in (0, 1):
                raise ValueError(f"event {i} polarity must be 0 or 1")
            if not 0 <= ev.timestamp_us <= self.duration_us:
                raise ValueError(f"event {i} timestamp outside the record duration")
            if ev.timestamp_us < prev:
                raise ValueError(f"event {i} breaks timestamp order")
            prev = ev.timestamp_us


@dataclass(frozen=True)
class FrameTensor:
    """Binary frames, steps x polarity x height x width."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[1] != 2:
            raise ValueError("frames must have shape (steps, 2, height, width)")
        if not np.isin(frames, (0, 1)).all():
            raise ValueError("frames must be binary")
        object.__setattr__(self, "frames", frames.astype(np.uint8))

    @property
    def steps(self) -> int:
        return self.frames.shape[0]

    def flat_steps(self) -> np.ndarray:
        """Per-step input vectors, polarity-major: index p*H*W + y*W + x."""
        return self.frames.reshape(self.steps, -1).astype(np.float64)


def events_to_frames(record: EventRecord, steps: int) -> FrameTensor:
    """Accumulate a record into `steps` uniform bins and binarize.

    Bin index is floor(ts * steps / duration) clamped to the last bin, so a
    timestamp equal to the duration still lands in-range.  Integer math
    keeps the edges exact.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    frames = np.zeros((steps, 2, record.height, record.width), dtype=np.uint8)
    for ev in record.events:
        b = ev.timestamp_us * steps // record.duration_us
        if b >= steps:
            b = steps - 1
        frames[b, ev.polarity, ev.y, ev.x] = 1
    return FrameTensor(frames)


def frames_to_inputs(records, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (n, steps, 2*H*W) float inputs plus labels.

    All records must share one sensor geometry.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    w, h = records[0].width, records[0].height
    for r in records:
        if (r.width, r.height) != (w, h):
            raise ValueError("records mix sensor geometries")
    inputs = np.stack([events_to_frames(r, steps).flat_steps() for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return inputs, labels


# ---------------------------------------------------------------------------
# synthetic task


@dataclass(frozen=True)
class SyntheticConfig:
    """Poisson oriented-bar task.

    Each class lights up one bar pattern; events_per_pixel is the expected
    event count per active pixel over the record, split across polarities
    by a class-dependent fraction, on top of a uniform background rate.
    """

    n_classes: int = 4
    width: int = 16
    height: int = 16
    duration_us: int = 20_000
    events_per_pixel: float = 8.0
    background_events: float = 0.3
    bar_halfwidth: int = 2

    def __post_init__(self):
        if not 2 <= self.n_classes <= 4:
            raise ValueError("the bar task defines 2 to 4 classes")
        if self.width < 4 or self.height < 4:
            raise ValueError("sensor too small for bar patterns")
        if self.duration_us < 1:
            raise ValueError("duration must be positive")
        if self.events_per_pixel < 0 or self.background_events < 0:
            raise ValueError("rates must be non-negative")


def class_rate_map(label: int, config: SyntheticConfig) -> np.ndarray:
    """Expected event counts per record, shape (2, height, width)."""
    if not 0 <= label < config.n_classes:
        raise ValueError(f"label {label} out of range")
    h, w = config.height, config.width
    ys, xs = np.mgrid[0:h, 0:w]
    hw = config.bar_halfwidth
    if label == 0:
        mask = np.abs(ys - h // 2) < hw
    elif label == 1:
        mask = np.abs(xs - w // 2) < hw
    elif label == 2:
        mask = np.abs(ys - xs) < hw
    else:
        mask = np.abs(ys + xs - (w - 1)) < hw
    on_fraction = (0.8, 0.6, 0.4, 0.2)[label]
    rates = np.full((2, h, w), config.background_events / 2.0)
    rates[1] += mask * config.events_per_pixel * on_fraction
    rates[0] += mask * config.events_per_pixel * (1.0 - on_fraction)
    return rates


def generate_synthetic(label: int, config: SyntheticConfig, rng: SeededRng) -> EventRecord:
    """Draw one record: Poisson counts per cell, uniform timestamps, sorted."""
    rates = class_rate_map(label, config)
    counts = rng.poisson(rates)
    total = int(counts.sum())
    if total == 0:
        return EventRecord([], label, config.width, config.height, config.duration_us)
    pol, ys, xs = np.nonzero(counts)
    reps = counts[pol, ys, xs]
    pol = np.repeat(pol, reps)
    ys = np.repeat(ys, reps)
    xs = np.repeat(xs, reps)
    stamps = rng.integers(0, config.duration_us + 1, size=total)
    order = np.argsort(stamps, kind="stable")
    events = [
        Event(int(stamps[i]), int(xs[i]), int(ys[i]), int(pol[i])) for i in order
    ]
    return EventRecord(events, label, config.width, config.height, config.duration_us)


def synthetic_records(
    config: SyntheticConfig, per_class: int, seed: int, tag: str = "train"
) -> list[EventRecord]:
    """per_class records for every class, each from its own (tag, class, index) stream."""
    root = SeededRng(seed)
    out = []
    for label in range(config.n_classes):
        for idx in range(per_class):
            out.append(
                generate_synthetic(label, config, root.substream("data", tag, label, idx))
            )
    return out


# ---------------------------------------------------------------------------
# text serialization


def save_events(records, path) -> None:
    """Write records in the block text format; round-trips through load_events."""
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(
                f"# record label={rec.label} w={rec.width} h={rec.height} "
                f"dur_us={rec.duration_us}\n"
            )
            for ev in rec.events:
                fh.write(f"{ev.timestamp_us} {ev.x} {ev.y} {ev.polarity}\n")
            fh.write("\n")


def _parse_header(line: str, lineno: int) -> dict:
    body = line[1:].strip()
    parts = body.split()
    if not parts or parts[0] != "record":
        raise EventFormatError(f"line {lineno}: expected '# record ...' header")
    fields = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise EventFormatError(f"line {lineno}: bad header field {item!r}")
        try:
            fields[key] = int(value)
        except ValueError:
            raise EventFormatError(f"line {lineno}: non-integer header value {item!r}")
    missing = {"label", "w", "h", "dur_us"} - fields.keys()
    if missing:
        raise EventFormatError(f"line {lineno}: header missing {sorted(missing)}")
    return fields


def load_events(path) -> list[EventRecord]:
    """Parse the block text format; malformed input names the bad line."""
    path = Path(path)
    records: list[EventRecord] = []
    header: dict | None = None
    header_line = 0
    events: list[Event] = []

    def close(lineno: int) -> None:
        nonlocal header, events
        if header is None:
            return
        try:
            records.append(
                EventRecord(
                    events,
                    header["label"],
                    header["w"],
                    header["h"],
                    header["dur_us"],
                )
            )
        except ValueError as exc:
            raise EventFormatError(
                f"record starting at line {header_line}: {exc}"
            ) from exc
        header = None
        events = []

    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                close(lineno)
                continue
            if line.startswith("#"):
                close(lineno)
                header = _parse_header(line, lineno)
                header_line = lineno
                continue
            if header is None:
                raise EventFormatError(f"line {lineno}: event before any record header")
            parts = line.split()
            if len(parts) != 4:
                raise EventFormatError(
                    f"line {lineno}: expected 4 fields, got {len(parts)}"
                )
            try:
                ts, x, y, pol = (int(p) for p in parts)
            except ValueError:
                raise EventFormatError(f"line {lineno}: non-integer event field")
            events.append(Event(ts, x, y, pol))
    close(-1)
    return records
