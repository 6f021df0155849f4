"""Event data model, file formats, temporal slicing and voxel grids.

An :class:`EventSlice` stores its events column-wise (``t``, ``x``, ``y``,
``p`` arrays) sorted by timestamp. Two on-disk formats are supported:

text::

    # evtxt1 <width> <height> <t_start> <t_end>
    t x y p

binary (little-endian)::

    b"EVT1" u32 width, u32 height, f64 t_start, f64 t_end, u64 count
    count x (f64 t, u16 x, u16 y, i8 p, 3 pad bytes)
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

TEXT_MAGIC = "evtxt1"
BINARY_MAGIC = b"EVT1"
_BIN_HEADER = struct.Struct("<4sIIddQ")
RECORD_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<f8", "<u2", "<u2", "i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)


class EventParseError(ValueError):
    """Malformed event file. Carries the line number or byte offset."""


class EventBoundsError(ValueError):
    """Event pixel outside the declared sensor."""


class DegenerateSpanError(ValueError):
    """Time span with t_start >= t_end."""


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    p: int


@dataclass(frozen=True, eq=False)
class EventSlice:
    """Time-sorted events on a ``width`` x ``height`` sensor over [t_start, t_end]."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t_start: float
    t_end: float
    width: int
    height: int

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        p = np.ascontiguousarray(self.p, dtype=np.int64)
        if not (t.shape == x.shape == y.shape == p.shape and t.ndim == 1):
            raise ValueError("t, x, y, p must be 1-D arrays of equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if not self.t_start < self.t_end:
            raise DegenerateSpanError(
                f"degenerate time span [{self.t_start}, {self.t_end}]"
            )
        if len(t) and np.any(np.diff(t) < 0):
            raise ValueError("events must be sorted by timestamp")
        if len(t) and (t[0] < self.t_start or t[-1] > self.t_end):
            raise ValueError("event timestamps outside [t_start, t_end]")
        bad = (x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise EventBoundsError(
                f"event {k} at ({x[k]}, {y[k]}) outside {self.width}x{self.height} sensor"
            )
        if np.any(np.abs(p) != 1):
            raise ValueError("polarities must be +1 or -1")
        for name, arr in (("t", t), ("x", x), ("y", y), ("p", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, t, x, y, p, width, height, t_start=None, t_end=None):
        """Build a slice from unsorted columns.

        Events are stably sorted by time. Missing span bounds default to the
        min/max timestamps; timestamps outside a given span are clamped into it.
        """
        t = np.asarray(t, dtype=np.float64)
        order = np.argsort(t, kind="stable")
        t = t[order]
        if t_start is None:
            t_start = float(t[0]) if len(t) else 0.0
        if t_end is None:
            t_end = float(t[-1]) if len(t) else 0.0
        t = np.clip(t, t_start, t_end)
        return cls(
            t,
            np.asarray(x)[order],
            np.asarray(y)[order],
            np.asarray(p)[order],
            float(t_start),
            float(t_end),
            int(width),
            int(height),
        )

    @classmethod
    def empty(cls, width, height, t_start, t_end):
        z = np.zeros(0)
        return cls(z, z, z, z, float(t_start), float(t_end), int(width), int(height))

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> Event:
        return Event(float(self.t[k]), int(self.x[k]), int(self.y[k]), int(self.p[k]))

    def __iter__(self) -> Iterator[Event]:
        for k in range(len(self)):
            yield self[k]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def subset(self, lo, hi, t_start, t_end) -> "EventSlice":
        return EventSlice(
            self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi],
            float(t_start), float(t_end), self.width, self.height,
        )

    def event_count_image(self) -> np.ndarray:
        counts = np.bincount(self.y * self.width + self.x, minlength=self.width * self.height)
        return counts.reshape(self.height, self.width)

    @cached_property
    def pairs(self) -> "PredecessorPairs":
        return predecessor_pairs(self)


# ---------------------------------------------------------------------------
# I/O


def _open_read(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return f.read()
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    data = source.read()
    return data.encode() if isinstance(data, str) else data


def read_events(source, format: str | None = None) -> EventSlice:
    """Read a slice from a path, bytes or file object.

    ``format`` is ``"text"`` or ``"binary"``; when omitted it is sniffed from
    the leading magic bytes.
    """
    data = _open_read(source)
    if format is None:
        format = "binary" if data[:4] == BINARY_MAGIC else "text"
    if format == "binary":
        return _read_binary(data)
    if format == "text":
        return _read_text(data.decode("ascii"))
    raise ValueError(f"unknown event format {format!r}")


def _read_text(text: str) -> EventSlice:
    lines = text.splitlines()
    if not lines:
        raise EventParseError("line 1: missing header")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "#" or head[1] != TEXT_MAGIC:
        raise EventParseError(f"line 1: bad header {lines[0]!r}")
    try:
        width, height = int(head[2]), int(head[3])
        t_start, t_end = float(head[4]), float(head[5])
    except ValueError as exc:
        raise EventParseError(f"line 1: bad header {lines[0]!r}") from exc
    if width <= 0 or height <= 0:
        raise EventParseError("line 1: sensor dimensions must be positive")

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 4:
            raise EventParseError(f"line {lineno}: expected 't x y p', got {line!r}")
        try:
            t, x, y, p = float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise EventParseError(f"line {lineno}: {exc}") from exc
        if p not in (1, -1):
            raise EventParseError(f"line {lineno}: polarity must be 1 or -1, got {p}")
        if not (0 <= x < width and 0 <= y < height):
            raise EventBoundsError(f"line {lineno}: pixel ({x}, {y}) outside {width}x{height}")
        rows.append((t, x, y, p))
    cols = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return EventSlice.from_arrays(
        cols[:, 0], cols[:, 1].astype(np.int64), cols[:, 2].astype(np.int64),
        cols[:, 3].astype(np.int64), width, height, t_start, t_end,
    )


def _read_binary(data: bytes) -> EventSlice:
    if len(data) < _BIN_HEADER.size:
        raise EventParseError(f"byte 0: truncated header ({len(data)} bytes)")
    magic, width, height, t_start, t_end, count = _BIN_HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise EventParseError(f"byte 0: bad magic {magic!r}")
    if width == 0 or height == 0:
        raise EventParseError("byte 4: sensor dimensions must be positive")
    expected = _BIN_HEADER.size + count * RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise EventParseError(
            f"byte {min(len(data), expected)}: expected {expected} bytes for {count} records, "
            f"got {len(data)}"
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=_BIN_HEADER.size)
    bad_p = np.flatnonzero(np.abs(rec["p"].astype(np.int64)) != 1)
    if len(bad_p):
        k = int(bad_p[0])
        raise EventParseError(
            f"byte {_BIN_HEADER.size + k * RECORD_DTYPE.itemsize + 12}: bad polarity {rec['p'][k]}"
        )
    bad_xy = np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))
    if len(bad_xy):
        k = int(bad_xy[0])
        field_offset = 8 if rec["x"][k] >= width else 10
        raise EventBoundsError(
            f"byte {_BIN_HEADER.size + k * RECORD_DTYPE.itemsize + field_offset}: pixel "
            f"({rec['x'][k]}, {rec['y'][k]}) outside {width}x{height}"
        )
    return EventSlice.from_arrays(
        rec["t"], rec["x"].astype(np.int64), rec["y"].astype(np.int64),
        rec["p"].astype(np.int64), width, height, t_start, t_end,
    )


def events_to_bytes(slc: EventSlice, format: str = "binary") -> bytes:
    if format == "binary":
        rec = np.zeros(len(slc), dtype=RECORD_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = slc.t, slc.x, slc.y, slc.p
        head = _BIN_HEADER.pack(
            BINARY_MAGIC, slc.width, slc.height, slc.t_start, slc.t_end, len(slc)
        )
        return head + rec.tobytes()
    if format == "text":
        out = io.StringIO()
        out.write(f"# {TEXT_MAGIC} {slc.width} {slc.height} {slc.t_start!r} {slc.t_end!r}\n")
        for t, x, y, p in zip(slc.t.tolist(), slc.x.tolist(), slc.y.tolist(), slc.p.tolist()):
            out.write(f"{t!r} {x} {y} {p}\n")
        return out.getvalue().encode("ascii")
    raise ValueError(f"unknown event format {format!r}")


def write_events(slc: EventSlice, dest, format: str = "binary") -> None:
    data = events_to_bytes(slc, format)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as f:
            f.write(data)
    else:
        dest.write(data)


# ---------------------------------------------------------------------------
# Slicing


@dataclass(frozen=True)
class FixedDuration:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("fixed_duration needs dt > 0")


@dataclass(frozen=True)
class FixedCount:
    n: int

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("fixed_count needs n > 0")


def parse_policy(text: str):
    """Parse ``fixed_duration:<dt>`` or ``fixed_count:<n>``."""
    kind, _, arg = text.partition(":")
    if kind == "fixed_duration":
        return FixedDuration(float(arg))
    if kind == "fixed_count":
        return FixedCount(int(arg))
    raise ValueError(f"unknown slicing policy {text!r}")


def slice_events(slc: EventSlice, policy) -> list[EventSlice]:
    """Split a slice into time-ordered children.

    ``FixedDuration`` partitions the time span into windows of ``dt`` (the
    last one ends at the parent's ``t_end``); each window is half-open except
    the last. ``FixedCount`` partitions the event sequence into runs of ``n``.
    """
    if len(slc) == 0:
        return []
    if isinstance(policy, FixedDuration):
        n = max(1, int(np.ceil(slc.duration / policy.dt - 1e-9)))
        edges = slc.t_start + policy.dt * np.arange(n + 1)
        edges[-1] = slc.t_end
        cuts = np.searchsorted(slc.t, edges[1:-1], side="left")
        cuts = np.concatenate([[0], cuts, [len(slc)]])
        return [
            slc.subset(cuts[k], cuts[k + 1], edges[k], edges[k + 1]) for k in range(n)
        ]
    if isinstance(policy, FixedCount):
        starts = list(range(0, len(slc), policy.n))
        out = []
        t0 = slc.t_start
        for j, lo in enumerate(starts):
            hi = min(lo + policy.n, len(slc))
            t1 = slc.t_end if hi == len(slc) else float(slc.t[hi])
            if not t1 > t0:
                # ties straddling the cut: nudge the boundary past them
                t1 = float(np.nextafter(t0, np.inf))
            out.append(slc.subset(lo, hi, t0, t1))
            t0 = t1
        return out
    raise TypeError(f"unknown slicing policy {policy!r}")


# ---------------------------------------------------------------------------
# Predecessors


class PredecessorPair(NamedTuple):
    index_k: int
    dt: float


class PredecessorPairs(NamedTuple):
    """Column form of the (event, predecessor-at-same-pixel) pairs."""

    index: np.ndarray
    prev: np.ndarray
    dt: np.ndarray

    def __len__(self):
        return len(self.index)

    def items(self) -> Sequence[PredecessorPair]:
        return [PredecessorPair(int(i), float(d)) for i, d in zip(self.index, self.dt)]


def predecessor_pairs(slc: EventSlice) -> PredecessorPairs:
    """Pair each event with the previous event at the same pixel.

    The first event at a pixel has no pair. Simultaneous events at one pixel
    (dt == 0) carry no motion information and are not paired.
    """
    pix = slc.y * slc.width + slc.x
    order = np.argsort(pix, kind="stable")
    same = pix[order][1:] == pix[order][:-1]
    idx = order[1:][same]
    prev = order[:-1][same]
    dt = slc.t[idx] - slc.t[prev]
    keep = dt > 0
    idx, prev, dt = idx[keep], prev[keep], dt[keep]
    o = np.argsort(idx, kind="stable")
    return PredecessorPairs(idx[o], prev[o], dt[o])


# ---------------------------------------------------------------------------
# Voxel grid


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    data: np.ndarray = field(repr=False)
    t_start: float
    t_end: float

    @property
    def bins(self) -> int:
        return self.data.shape[0]


def build_voxel_grid(slc: EventSlice, bins: int = 15) -> VoxelGrid:
    """Signed-polarity voxel grid with temporal bilinear weights."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    H, W = slc.height, slc.width
    grid = np.zeros(bins * H * W, dtype=np.float64)
    if len(slc):
        tn = (slc.t - slc.t_start) / slc.duration * (bins - 1)
        b0 = np.clip(np.floor(tn).astype(np.int64), 0, max(bins - 2, 0))
        frac = tn - b0
        if bins == 1:
            frac = np.zeros_like(tn)
        pix = slc.y * W + slc.x
        grid += np.bincount(b0 * H * W + pix, weights=slc.p * (1.0 - frac), minlength=grid.size)
        if bins > 1:
            grid += np.bincount((b0 + 1) * H * W + pix, weights=slc.p * frac, minlength=grid.size)
    return VoxelGrid(grid.reshape(bins, H, W).astype(np.float32), slc.t_start, slc.t_end)
