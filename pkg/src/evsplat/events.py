"""Event data model, exposure-window binning, and an ideal DVS simulator.

Conventions used throughout the package:

* Bin intervals are half-open on the left: bin ``i`` owns timestamps in
  ``(t_i, t_{i+1}]``, so the ``N - 1`` bins partition the exposure window
  and an event landing exactly on an interior boundary belongs to the
  earlier bin.
* Intensities are clamped to ``LOG_EPS`` before any logarithm.  The same
  constant is used by the simulator here and by the event-count estimator
  in :mod:`evsplat.losses`, so the two quantize the same quantity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import MalformedStreamError

# Floor applied to intensities before taking logs (avoids -inf on black
# pixels).  Shared by the simulator and the estimator.
LOG_EPS = 1e-4


@dataclass(frozen=True)
class Thresholds:
    """Contrast thresholds in log-intensity units, one per polarity."""

    c_pos: float = 0.2
    c_neg: float = 0.3

    def __post_init__(self) -> None:
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise ValueError(
                f"thresholds must be positive, got c_pos={self.c_pos}, "
                f"c_neg={self.c_neg}"
            )


@dataclass(frozen=True)
class Event:
    """A single brightness-change report: pixel, timestamp, polarity."""

    x: int
    y: int
    tau: float
    p: int

    def __post_init__(self) -> None:
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative pixel coordinate ({self.x}, {self.y})")


def _event_arrays(events: Iterable[Event]):
    evts = list(events)
    xs = np.array([e.x for e in evts], dtype=np.int64)
    ys = np.array([e.y for e in evts], dtype=np.int64)
    taus = np.array([e.tau for e in evts], dtype=np.float64)
    ps = np.array([e.p for e in evts], dtype=np.int64)
    return xs, ys, taus, ps


@dataclass
class EventStream:
    """Events over one exposure window, stored as parallel arrays.

    Timestamps must be non-decreasing and lie in ``(t_start, t_end]``.
    """

    xs: np.ndarray
    ys: np.ndarray
    taus: np.ndarray
    ps: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        self.taus = np.asarray(self.taus, dtype=np.float64)
        self.ps = np.asarray(self.ps, dtype=np.int64)
        n = len(self.taus)
        if not (len(self.xs) == len(self.ys) == len(self.ps) == n):
            raise MalformedStreamError("event arrays have mismatched lengths")
        if not self.t_end > self.t_start:
            raise MalformedStreamError(
                f"empty exposure window [{self.t_start}, {self.t_end}]"
            )
        if n:
            if np.any(np.diff(self.taus) < 0):
                raise MalformedStreamError("event timestamps are not sorted")
            if self.taus[0] <= self.t_start or self.taus[-1] > self.t_end:
                raise MalformedStreamError(
                    "event timestamps fall outside the exposure window "
                    f"({self.t_start}, {self.t_end}]"
                )
            bad = ~np.isin(self.ps, (1, -1))
            if np.any(bad):
                raise MalformedStreamError("polarities must be +1 or -1")
            if np.any(self.xs < 0) or np.any(self.ys < 0):
                raise MalformedStreamError("negative pixel coordinates")

    @classmethod
    def empty(cls, t_start: float, t_end: float) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, t_start, t_end)

    @classmethod
    def from_events(
        cls, events: Iterable[Event], t_start: float, t_end: float
    ) -> "EventStream":
        return cls(*_event_arrays(events), t_start, t_end)

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self) -> Iterator[Event]:
        for x, y, tau, p in zip(self.xs, self.ys, self.taus, self.ps):
            yield Event(int(x), int(y), float(tau), int(p))


@dataclass
class EventBin:
    """The events of one sub-interval ``(t_i, t_{i+1}]`` of an exposure."""

    xs: np.ndarray
    ys: np.ndarray
    taus: np.ndarray
    ps: np.ndarray
    interval: tuple[float, float]

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self) -> Iterator[Event]:
        for x, y, tau, p in zip(self.xs, self.ys, self.taus, self.ps):
            yield Event(int(x), int(y), float(tau), int(p))


@dataclass
class EventBinImage:
    """Per-pixel signed event counts over one interval.

    Positive and negative polarities cancel: each entry is the plain signed
    sum of the polarities that hit the pixel.
    """

    counts: np.ndarray
    interval: tuple[float, float]


def bin_timestamps(t_start: float, t_end: float, n: int) -> np.ndarray:
    """The `n` equally spaced instants that delimit the event bins."""
    if n < 2:
        raise ValueError(f"need at least 2 timestamps, got n={n}")
    return np.linspace(t_start, t_end, n)


def bin_events(stream: EventStream, n: int) -> list[EventBin]:
    """Split a stream into ``n - 1`` bins over equally spaced timestamps.

    Bin ``i`` holds events with ``t_i < tau <= t_{i+1}``; concatenating the
    bins in order reproduces the stream exactly.
    """
    ts = bin_timestamps(stream.t_start, stream.t_end, n)
    # Right-sided search realizes the (t_i, t_{i+1}] ownership rule.
    edges = np.searchsorted(stream.taus, ts, side="right")
    bins = []
    for i in range(n - 1):
        lo, hi = edges[i], edges[i + 1]
        bins.append(
            EventBin(
                xs=stream.xs[lo:hi],
                ys=stream.ys[lo:hi],
                taus=stream.taus[lo:hi],
                ps=stream.ps[lo:hi],
                interval=(float(ts[i]), float(ts[i + 1])),
            )
        )
    return bins


def accumulate_bin_image(
    events: EventBin | EventStream | Sequence[Event],
    interval: tuple[float, float],
    width: int,
    height: int,
) -> EventBinImage:
    """Signed per-pixel polarity sum of the given events.

    Raises :class:`MalformedStreamError` when an event lies outside the
    sensor or outside ``interval``.
    """
    if isinstance(events, (EventBin, EventStream)):
        xs, ys, taus, ps = events.xs, events.ys, events.taus, events.ps
    else:
        xs, ys, taus, ps = _event_arrays(events)

    counts = np.zeros((height, width), dtype=np.int64)
    if len(taus) == 0:
        return EventBinImage(counts=counts, interval=interval)

    if np.any((xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)):
        raise MalformedStreamError(
            f"event coordinates outside the {width}x{height} sensor"
        )
    t_lo, t_hi = interval
    if np.any((taus <= t_lo) | (taus > t_hi)):
        raise MalformedStreamError(
            f"event timestamps outside the interval ({t_lo}, {t_hi}]"
        )
    np.add.at(counts, (ys, xs), ps)
    return EventBinImage(counts=counts, interval=interval)


def simulate_events(
    latents: Sequence[np.ndarray] | np.ndarray,
    timestamps: Sequence[float] | np.ndarray,
    thresholds: Thresholds,
) -> EventStream:
    """Ideal contrast-threshold camera applied to a sequence of intensity images.

    Each pixel keeps a reference log intensity, initialized from the first
    image.  When the log intensity of the next image differs from the
    reference by at least one threshold, ``floor(|delta| / C)`` events of
    the corresponding polarity fire and the reference advances by the
    emitted quanta; the sub-threshold residual carries over to later frames.
    Event timestamps are spread uniformly over the frame interval, with the
    last one landing exactly on the interval's right edge.

    The output ordering is canonical (timestamp, then row, column,
    polarity) and the whole procedure is deterministic.
    """
    frames = np.asarray(latents, dtype=np.float64)
    ts = np.asarray(timestamps, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(
            f"expected a stack of 2-d intensity images, got shape {frames.shape}"
        )
    if len(frames) != len(ts):
        raise ValueError(
            f"{len(frames)} images but {len(ts)} timestamps"
        )
    if len(frames) < 2:
        raise ValueError("need at least two images to simulate events")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("timestamps must be strictly increasing")

    height, width = frames[0].shape
    yy, xx = np.mgrid[0:height, 0:width]
    xx = xx.ravel()
    yy = yy.ravel()

    ref = np.log(np.maximum(frames[0], LOG_EPS)).ravel()
    out_x: list[np.ndarray] = []
    out_y: list[np.ndarray] = []
    out_t: list[np.ndarray] = []
    out_p: list[np.ndarray] = []

    for i in range(len(frames) - 1):
        cur = np.log(np.maximum(frames[i + 1], LOG_EPS)).ravel()
        delta = cur - ref
        k_pos = np.floor(delta / thresholds.c_pos).astype(np.int64)
        np.clip(k_pos, 0, None, out=k_pos)
        k_neg = np.floor(-delta / thresholds.c_neg).astype(np.int64)
        np.clip(k_neg, 0, None, out=k_neg)
        ref += k_pos * thresholds.c_pos
        ref -= k_neg * thresholds.c_neg

        t_lo, t_hi = ts[i], ts[i + 1]
        dt = t_hi - t_lo
        for counts, polarity in ((k_pos, 1), (k_neg, -1)):
            mask = counts > 0
            if not np.any(mask):
                continue
            k = counts[mask]
            total = int(k.sum())
            k_rep = np.repeat(k, k)
            starts = np.cumsum(k) - k
            # 1..k within each pixel's run of events.
            j = np.arange(total) - np.repeat(starts, k) + 1
            # Walk back from the right edge so the last event hits t_hi
            # exactly (t_lo + dt may not round-trip in floating point).
            taus = t_hi - (k_rep - j) * (dt / k_rep)
            out_x.append(np.repeat(xx[mask], k))
            out_y.append(np.repeat(yy[mask], k))
            out_t.append(taus)
            out_p.append(np.full(total, polarity, dtype=np.int64))

    if not out_t:
        return EventStream.empty(float(ts[0]), float(ts[-1]))

    xs = np.concatenate(out_x)
    ys = np.concatenate(out_y)
    taus = np.concatenate(out_t)
    ps = np.concatenate(out_p)
    order = np.lexsort((ps, xs, ys, taus))
    return EventStream(xs[order], ys[order], taus[order], ps[order],
                       float(ts[0]), float(ts[-1]))


def write_event_file(path, stream: EventStream) -> None:
    """Write events as text, one ``tau x y p`` record per line."""
    with open(path, "w") as fh:
        fh.write("# tau x y p\n")
        for x, y, tau, p in zip(stream.xs, stream.ys, stream.taus, stream.ps):
            fh.write(f"{float(tau)!r} {int(x)} {int(y)} {int(p)}\n")


def read_event_file(
    path,
    t_start: float,
    t_end: float,
    width: int,
    height: int,
) -> EventStream:
    """Parse an event text file, validating every record.

    Errors carry the 1-based line number of the offending record.
    """
    xs: list[int] = []
    ys: list[int] = []
    taus: list[float] = []
    ps: list[int] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise MalformedStreamError(
                    f"{path}:{lineno}: expected 'tau x y p', got {line!r}"
                )
            try:
                tau = float(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                p = int(parts[3])
            except ValueError as exc:
                raise MalformedStreamError(
                    f"{path}:{lineno}: unparseable event record: {exc}"
                ) from None
            if p not in (1, -1):
                raise MalformedStreamError(
                    f"{path}:{lineno}: polarity must be 1 or -1, got {p}"
                )
            if not (0 <= x < width and 0 <= y < height):
                raise MalformedStreamError(
                    f"{path}:{lineno}: pixel ({x}, {y}) outside the "
                    f"{width}x{height} sensor"
                )
            if taus and tau < taus[-1]:
                raise MalformedStreamError(
                    f"{path}:{lineno}: timestamps not sorted "
                    f"({tau} after {taus[-1]})"
                )
            if not (t_start < tau <= t_end):
                raise MalformedStreamError(
                    f"{path}:{lineno}: timestamp {tau} outside the exposure "
                    f"window ({t_start}, {t_end}]"
                )
            taus.append(tau)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    return EventStream(
        np.array(xs, dtype=np.int64),
        np.array(ys, dtype=np.int64),
        np.array(taus, dtype=np.float64),
        np.array(ps, dtype=np.int64),
        t_start,
        t_end,
    )
