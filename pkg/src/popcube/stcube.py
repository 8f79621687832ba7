"""Dense cell x time container for one variable, with a missing mask,
an event timeline, and event-delimited sectioning.
"""

from __future__ import annotations

import csv
import warnings
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import OutOfRangeError, PopcubeError, TooShortError
from .grid import GridSpec
from .ingest import (
    SIGMA_MIN_DEFAULT,
    SliceRecord,
    SliceSet,
    TimeSlice,
    parse_timestamp,
    snap_stamp,
)

CUBE_VARIABLES = ("z_score", "n_crisis", "n_difference", "gi_star")

ORDER_PLACED = "order_placed"
ORDER_LIFTED = "order_lifted"


@dataclass(frozen=True)
class TimelineEvent:
    instant: datetime
    kind: str  # order_placed | order_lifted | other
    label: str
    zone: frozenset[int] | None = None  # cell ids; None means grid-wide


@dataclass(frozen=True)
class EventTimeline:
    events: tuple[TimelineEvent, ...]

    def __post_init__(self):
        evs = tuple(sorted(self.events, key=lambda e: e.instant))
        object.__setattr__(self, "events", evs)
        labels = [e.label for e in evs]
        if len(labels) != len(set(labels)):
            raise PopcubeError("event labels must be unique")

    def for_zone(self, mask) -> "EventTimeline":
        """Events relevant to a cell mask: grid-wide ones plus any whose
        zone intersects the mask."""
        cells = frozenset(int(c) for c in mask)
        kept = tuple(e for e in self.events
                     if e.zone is None or e.zone & cells)
        return EventTimeline(events=kept)


@dataclass(frozen=True)
class Section:
    """Half-open [start, end) index interval over cube timestamps."""

    start: int
    end: int
    label: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise PopcubeError(f"invalid section [{self.start}, {self.end})")


@dataclass
class SpaceTimeCube:
    grid: GridSpec
    timestamps: list[datetime]
    values: np.ndarray   # (n_cells, n_slices), NaN at missing entries
    missing: np.ndarray  # (n_cells, n_slices) bool
    variable: str

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        self.missing = np.asarray(self.missing, bool)
        shape = (self.grid.n_cells, len(self.timestamps))
        if self.values.shape != shape or self.missing.shape != shape:
            raise PopcubeError(f"cube arrays must have shape {shape}")
        if self.variable not in CUBE_VARIABLES:
            raise PopcubeError(f"unknown cube variable: {self.variable!r}")

    @property
    def n_slices(self) -> int:
        return len(self.timestamps)

    def slice_view(self, t_index: int):
        """Read-only (values, missing) views of one time slice."""
        if not (0 <= t_index < self.n_slices):
            raise OutOfRangeError(f"slice index {t_index} outside cube of {self.n_slices}")
        vals = self.values[:, t_index]
        miss = self.missing[:, t_index]
        vals.flags.writeable = False
        miss.flags.writeable = False
        return vals, miss

    def time_slice(self, start: int, end: int) -> "SpaceTimeCube":
        """Sub-cube over the half-open slice range [start, end)."""
        if not (0 <= start < end <= self.n_slices):
            raise OutOfRangeError(f"time range [{start}, {end}) outside cube")
        return SpaceTimeCube(grid=self.grid, timestamps=self.timestamps[start:end],
                             values=self.values[:, start:end].copy(),
                             missing=self.missing[:, start:end].copy(),
                             variable=self.variable)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpaceTimeCube):
            return NotImplemented
        return (self.grid == other.grid
                and self.timestamps == other.timestamps
                and self.variable == other.variable
                and np.array_equal(self.missing, other.missing)
                and np.array_equal(self.values, other.values, equal_nan=True))


def build_cube(slices: SliceSet, variable: str = "z_score",
               sigma_min: float = SIGMA_MIN_DEFAULT) -> SpaceTimeCube:
    """Lay the per-slice maps of one variable over time.

    Records absent from a slice become missing entries; fewer than two
    timestamps cannot make a cube.
    """
    if slices.n_slices < 2:
        raise TooShortError(f"need at least 2 slices, got {slices.n_slices}")
    vals, missing = slices.field_arrays(variable, sigma_min)
    return SpaceTimeCube(grid=slices.grid, timestamps=slices.timestamps,
                         values=vals, missing=missing, variable=variable)


def to_slice_set(cube: SpaceTimeCube) -> SliceSet:
    """Rebuild a minimal SliceSet carrying the cube's variable.

    Synthesizes the count fields so the chosen variable round-trips
    through build_cube; not available for gi_star cubes.
    """
    if cube.variable == "gi_star":
        raise PopcubeError("gi_star cubes cannot be recast as slice sets")
    slices = []
    for t, ts in enumerate(cube.timestamps):
        records = {}
        for cell in np.nonzero(~cube.missing[:, t])[0]:
            v = float(cube.values[cell, t])
            if cube.variable == "z_score":
                rec = SliceRecord(timestamp=ts, cell=int(cell), n_baseline=0.0,
                                  n_crisis=0.0, n_difference=0.0,
                                  percent_change=None, z_score=v)
            elif cube.variable == "n_crisis":
                rec = SliceRecord(timestamp=ts, cell=int(cell), n_baseline=0.0,
                                  n_crisis=v, n_difference=v, percent_change=None)
            else:  # n_difference
                rec = SliceRecord(timestamp=ts, cell=int(cell),
                                  n_baseline=max(-v, 0.0), n_crisis=max(v, 0.0),
                                  n_difference=v, percent_change=None)
            records[int(cell)] = rec
        slices.append(TimeSlice(timestamp=ts, stamp=snap_stamp(ts), records=records))
    return SliceSet(grid=cube.grid, slices=slices)


def section_by_events(cube: SpaceTimeCube, timeline: EventTimeline | None) -> list[Section]:
    """Split the cube's time range at event instants.

    Each boundary sits at the first slice index whose timestamp is at or
    after the event, so the slice at an order instant belongs to the
    post-order section. Events outside the span are ignored with a
    warning. No events means one full-range section.
    """
    T = cube.n_slices
    boundaries: list[tuple[int, str]] = []
    if timeline is not None:
        for ev in timeline.events:
            idx = bisect_left(cube.timestamps, ev.instant)
            if idx >= T:
                warnings.warn(f"event {ev.label!r} falls after the last slice; ignored",
                              stacklevel=2)
                continue
            if idx == 0:
                warnings.warn(f"event {ev.label!r} precedes the first slice; ignored",
                              stacklevel=2)
                continue
            boundaries.append((idx, ev.label))
    sections = []
    prev = 0
    prev_label = "start"
    for idx, label in boundaries:
        if idx == prev:
            prev_label = label  # coincident boundaries: later event names the section
            continue
        sections.append(Section(start=prev, end=idx, label=prev_label))
        prev, prev_label = idx, label
    sections.append(Section(start=prev, end=T, label=prev_label))
    return sections


# -- persistence: cells.csv / timestamps.csv / values.csv ------------------

_NA = "NA"


def save_cube(cube: SpaceTimeCube, directory) -> list[Path]:
    """Write the CSV triple; missing values carry the NA sentinel."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cells_p, times_p, values_p = d / "cells.csv", d / "timestamps.csv", d / "values.csv"
    with open(cells_p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "col", "row"])
        for cell in range(cube.grid.n_cells):
            col, row = cube.grid.cell_colrow(cell)
            w.writerow([cell, col, row])
    with open(times_p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_index", "timestamp"])
        for t, ts in enumerate(cube.timestamps):
            w.writerow([t, _iso(ts)])
    with open(values_p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id"] + [f"t{t}" for t in range(cube.n_slices)])
        for cell in range(cube.grid.n_cells):
            row = [cell]
            for t in range(cube.n_slices):
                row.append(_NA if cube.missing[cell, t] else repr(float(cube.values[cell, t])))
            w.writerow(row)
    return [cells_p, times_p, values_p]


def load_cube(directory, grid: GridSpec, variable: str = "z_score") -> SpaceTimeCube:
    d = Path(directory)
    with open(d / "timestamps.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        timestamps = [parse_timestamp(r["timestamp"]) for r in reader]
    n, T = grid.n_cells, len(timestamps)
    values = np.full((n, T), np.nan)
    missing = np.ones((n, T), dtype=bool)
    with open(d / "values.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            cell = int(row[0])
            for t, tok in enumerate(row[1:]):
                if tok != _NA:
                    values[cell, t] = float(tok)
                    missing[cell, t] = False
    return SpaceTimeCube(grid=grid, timestamps=timestamps, values=values,
                         missing=missing, variable=variable)


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
