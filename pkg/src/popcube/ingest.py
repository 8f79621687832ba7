"""Readers and aligners for the population-slice feed, reference rasters,
and zonal polygons.

The slice CSV schema is the disaster-maps style feed: one row per
(timestamp, cell) with columns ``timestamp, lon, lat, n_baseline,
n_crisis, n_difference, percent_change, z_score, baseline_sigma`` (the
last two optional, and ``n_difference``/``percent_change`` are computed
when absent). Cells absent from a slice are treated as missing, never as
zero: low-count suppression in the upstream feed would otherwise read as
evacuation signal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, time, timezone
from pathlib import Path

import numpy as np

from . import geometry
from .errors import (
    DuplicateRowError,
    NoOverlapError,
    PopcubeError,
    RowParseError,
    SchemaError,
    ZoneOverlapError,
)
from .grid import GridSpec, _M_PER_DEG_LAT, _m_per_deg_lon

CANONICAL_STAMPS = (time(1, 0), time(9, 0), time(17, 0))
STAMP_SNAP_MINUTES = 30

SLICE_COLUMNS = ("timestamp", "lon", "lat", "n_baseline", "n_crisis",
                 "n_difference", "percent_change", "z_score", "baseline_sigma")
REQUIRED_COLUMNS = ("timestamp", "lon", "lat", "n_baseline", "n_crisis")

SIGMA_MIN_DEFAULT = 0.1


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp -> aware UTC datetime ('Z' suffix accepted)."""
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def snap_stamp(ts: datetime) -> time | None:
    """Nearest canonical time-of-day stamp within +/-30 min, else None."""
    minutes = ts.hour * 60 + ts.minute
    for stamp in CANONICAL_STAMPS:
        target = stamp.hour * 60 + stamp.minute
        delta = abs(minutes - target)
        delta = min(delta, 1440 - delta)
        if delta <= STAMP_SNAP_MINUTES:
            return stamp
    return None


@dataclass
class SliceRecord:
    """One (timestamp, cell) observation from the feed."""

    timestamp: datetime
    cell: int
    n_baseline: float
    n_crisis: float
    n_difference: float
    percent_change: float | None
    z_score: float | None = None
    baseline_sigma: float | None = None


@dataclass
class TimeSlice:
    timestamp: datetime
    stamp: time | None
    records: dict[int, SliceRecord]


@dataclass
class SliceSet:
    """Time-ordered population slices aligned to a grid.

    Gaps (missing slices or missing cells) are permitted; parse
    diagnostics are carried as counters.
    """

    grid: GridSpec
    slices: list[TimeSlice]
    stamp_times: tuple[time, ...] = ()
    dropped_outside: int = 0
    non_canonical: int = 0

    def __post_init__(self):
        ts = self.timestamps
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise PopcubeError("slice timestamps must be strictly increasing")
        if not self.stamp_times:
            stamps = sorted({s.stamp for s in self.slices if s.stamp is not None})
            self.stamp_times = tuple(stamps)

    @property
    def timestamps(self) -> list[datetime]:
        return [s.timestamp for s in self.slices]

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def field_arrays(self, variable: str, sigma_min: float = SIGMA_MIN_DEFAULT):
        """(values, missing) arrays of shape (n_cells, n_slices)."""
        n = self.grid.n_cells
        vals = np.full((n, self.n_slices), np.nan)
        for t, sl in enumerate(self.slices):
            for cell, rec in sl.records.items():
                v = record_value(rec, variable, sigma_min)
                if v is not None:
                    vals[cell, t] = v
        return vals, np.isnan(vals)


def record_value(rec: SliceRecord, variable: str,
                 sigma_min: float = SIGMA_MIN_DEFAULT) -> float | None:
    """Numeric value of a record field; z_score falls back to the floored
    standardization when the column was absent but the dispersion is known."""
    if variable == "z_score":
        if rec.z_score is not None:
            return rec.z_score
        if rec.baseline_sigma is not None:
            return (rec.n_crisis - rec.n_baseline) / max(rec.baseline_sigma, sigma_min)
        return None
    if variable in ("n_baseline", "n_crisis", "n_difference"):
        return getattr(rec, variable)
    if variable == "percent_change":
        return rec.percent_change
    raise PopcubeError(f"unknown slice variable: {variable!r}")


def _opt_float(text: str, line: int, col: str, source: str) -> float | None:
    t = text.strip()
    if not t:
        return None
    try:
        return float(t)
    except ValueError:
        raise RowParseError(f"column {col!r}: cannot parse number {text!r}", line, source) from None


def parse_slices(source, grid: GridSpec) -> SliceSet:
    """Parse the slice CSV schema from a path or open text stream.

    Rows snap to the containing cell; rows outside the grid are counted
    and dropped. Duplicate (timestamp, cell) rows raise an error naming
    both line numbers. Parsing is strict: a malformed row raises with its
    line number rather than being skipped silently.
    """
    if isinstance(source, (str, Path)):
        name = str(source)
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse_stream(fh, grid, name)
    return _parse_stream(source, grid, getattr(source, "name", "<stream>"))


def _parse_stream(stream: io.TextIOBase, grid: GridSpec, name: str) -> SliceSet:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{name}: empty input, header row required") from None
    cols = {c.strip(): i for i, c in enumerate(header)}
    missing = [c for c in REQUIRED_COLUMNS if c not in cols]
    if missing:
        raise SchemaError(f"{name}: missing required columns: {', '.join(missing)}")

    by_time: dict[datetime, dict[int, SliceRecord]] = {}
    seen: dict[tuple[datetime, int], int] = {}
    dropped = 0
    ts_cache: dict[str, datetime] = {}
    idx = {c: cols.get(c) for c in SLICE_COLUMNS}
    n_fields = len(cols)

    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < n_fields:
            raise RowParseError(f"expected {n_fields} fields, got {len(row)}", line, name)

        def get(col: str) -> str:
            i = idx[col]
            return row[i] if i is not None else ""

        raw_ts = get("timestamp")
        ts = ts_cache.get(raw_ts)
        if ts is None:
            try:
                ts = parse_timestamp(raw_ts)
            except ValueError:
                raise RowParseError(f"cannot parse timestamp {raw_ts!r}", line, name) from None
            ts_cache[raw_ts] = ts
        lon = _opt_float(get("lon"), line, "lon", name)
        lat = _opt_float(get("lat"), line, "lat", name)
        n_base = _opt_float(get("n_baseline"), line, "n_baseline", name)
        n_cris = _opt_float(get("n_crisis"), line, "n_crisis", name)
        if None in (lon, lat, n_base, n_cris):
            raise RowParseError("required field is empty", line, name)
        if n_base < 0 or n_cris < 0:
            raise RowParseError("population counts must be non-negative", line, name)

        cell = grid.cell_at(lon, lat)
        if cell is None:
            dropped += 1
            continue

        n_diff = _opt_float(get("n_difference"), line, "n_difference", name)
        expected = n_cris - n_base
        if n_diff is None:
            n_diff = expected
        elif abs(n_diff - expected) > 1e-6 * max(1.0, n_base):
            raise RowParseError(
                f"n_difference={n_diff} inconsistent with n_crisis-n_baseline={expected}", line, name)
        pct = _opt_float(get("percent_change"), line, "percent_change", name)
        if pct is None and n_base > 0:
            pct = 100.0 * n_diff / n_base

        key = (ts, cell)
        if key in seen:
            raise DuplicateRowError(
                f"{name}: duplicate (timestamp, cell) = ({ts.isoformat()}, {cell})",
                (seen[key], line))
        seen[key] = line

        by_time.setdefault(ts, {})[cell] = SliceRecord(
            timestamp=ts, cell=cell, n_baseline=n_base, n_crisis=n_cris,
            n_difference=n_diff, percent_change=pct,
            z_score=_opt_float(get("z_score"), line, "z_score", name),
            baseline_sigma=_opt_float(get("baseline_sigma"), line, "baseline_sigma", name),
        )

    slices = []
    non_canonical = 0
    for ts in sorted(by_time):
        stamp = snap_stamp(ts)
        if stamp is None:
            non_canonical += 1
        slices.append(TimeSlice(timestamp=ts, stamp=stamp, records=by_time[ts]))
    return SliceSet(grid=grid, slices=slices, dropped_outside=dropped,
                    non_canonical=non_canonical)


# -- reference population -------------------------------------------------

@dataclass
class RasterPopulation:
    """Gridded reference population on its own lattice."""

    grid: GridSpec
    counts: np.ndarray  # (n_cells,)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, float)
        if self.counts.shape != (self.grid.n_cells,):
            raise PopcubeError("raster counts must have one value per cell")
        if (self.counts < 0).any():
            raise PopcubeError("population counts must be non-negative")


@dataclass
class Zone:
    zone_id: str
    polygon: list[tuple[float, float]]  # lon/lat ring, not closed
    population: float
    cohort_shares: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.population < 0:
            raise PopcubeError(f"zone {self.zone_id}: negative population")
        if not geometry.polygon_is_simple(self.polygon):
            raise PopcubeError(f"zone {self.zone_id}: polygon is not simple")


@dataclass
class ZonalPopulation:
    zones: list[Zone]


def read_raster_csv(csv_path, grid_path) -> RasterPopulation:
    """(lon, lat, population) CSV plus a JSON grid descriptor sidecar."""
    from .grid import load_grid

    grid = load_grid(grid_path)
    counts = np.zeros(grid.n_cells)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {c.strip(): i for i, c in enumerate(header)}
        for need in ("lon", "lat", "population"):
            if need not in cols:
                raise SchemaError(f"{csv_path}: missing column {need!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            lon = _opt_float(row[cols["lon"]], line, "lon", str(csv_path))
            lat = _opt_float(row[cols["lat"]], line, "lat", str(csv_path))
            pop = _opt_float(row[cols["population"]], line, "population", str(csv_path))
            cell = grid.cell_at(lon, lat)
            if cell is not None:
                counts[cell] += pop
    return RasterPopulation(grid=grid, counts=counts)


def read_raster_ascii(path) -> RasterPopulation:
    """ASCII-grid style raster: header keys ncols/nrows/xllcorner/yllcorner/
    cellsize_m/nodata_value, then one row of values per grid row, top-down.
    Corner coordinates are degrees, the cell size is meters."""
    header: dict[str, float] = {}
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            parts = raw.split()
            if not parts:
                continue
            if len(parts) == 2 and not _is_number(parts[0]):
                header[parts[0].lower()] = float(parts[1])
            else:
                rows.append([float(p) for p in parts])
    for need in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize_m"):
        if need not in header:
            raise SchemaError(f"{path}: missing header key {need!r}")
    n_cols, n_rows = int(header["ncols"]), int(header["nrows"])
    if len(rows) != n_rows or any(len(r) != n_cols for r in rows):
        raise SchemaError(f"{path}: value block does not match ncols x nrows")
    nodata = header.get("nodata_value")
    grid = GridSpec(scheme="square", origin=(header["xllcorner"], header["yllcorner"]),
                    cell_size_m=header["cellsize_m"], n_cols=n_cols, n_rows=n_rows)
    counts = np.zeros(grid.n_cells)
    for i, vals in enumerate(rows):
        row_idx = n_rows - 1 - i  # file is top-down, lattice rows go up
        for col, v in enumerate(vals):
            if nodata is not None and v == nodata:
                v = 0.0
            counts[grid.cell_index(col, row_idx)] = v
    return RasterPopulation(grid=grid, counts=counts)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def read_zones_geojson(path) -> ZonalPopulation:
    """Zonal polygons from a GeoJSON FeatureCollection with properties
    zone_id, population, and optional cohort_* shares."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a GeoJSON FeatureCollection")
    zones = []
    for feat in doc.get("features", []):
        props = feat.get("properties", {})
        geom = feat.get("geometry", {})
        if geom.get("type") != "Polygon":
            raise SchemaError(f"{path}: zone geometries must be Polygons")
        ring = [(float(x), float(y)) for x, y in geom["coordinates"][0]]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        cohorts = {k: float(v) for k, v in props.items() if k.startswith("cohort_")}
        zones.append(Zone(zone_id=str(props["zone_id"]), polygon=ring,
                          population=float(props["population"]),
                          cohort_shares=cohorts))
    return ZonalPopulation(zones=zones)


# -- alignment ------------------------------------------------------------

def _degree_edges(grid: GridSpec):
    """Cell edge coordinates in degrees along each axis (square grids)."""
    kx = _m_per_deg_lon(grid.anchor[1])
    s = grid.cell_size_m
    lons = grid.origin[0] + np.arange(grid.n_cols + 1) * s / kx
    lats = grid.origin[1] + np.arange(grid.n_rows + 1) * s / _M_PER_DEG_LAT
    return lons, lats


def _overlap_fractions(src_edges: np.ndarray, tgt_edges: np.ndarray) -> np.ndarray:
    """F[i, j] = fraction of source interval i overlapped by target interval j."""
    ns, nt = len(src_edges) - 1, len(tgt_edges) - 1
    lo = np.maximum(src_edges[:-1, None], tgt_edges[None, :-1])
    hi = np.minimum(src_edges[1:, None], tgt_edges[None, 1:])
    ov = np.clip(hi - lo, 0.0, None)
    width = (src_edges[1:] - src_edges[:-1])[:, None]
    return ov / width


def resample_to_grid(ref: RasterPopulation, target: GridSpec) -> np.ndarray:
    """Area-weighted reallocation of a square reference raster onto a square
    target lattice. Each source cell's count is split by the fraction of its
    area that falls in each target cell, which conserves total population
    over the overlap region."""
    if ref.grid.scheme != "square" or target.scheme != "square":
        raise PopcubeError("resample_to_grid handles square lattices")
    src_lon, src_lat = _degree_edges(ref.grid)
    tgt_lon, tgt_lat = _degree_edges(target)
    fx = _overlap_fractions(src_lon, tgt_lon)   # (src_cols, tgt_cols)
    fy = _overlap_fractions(src_lat, tgt_lat)   # (src_rows, tgt_rows)
    if fx.sum() == 0.0 or fy.sum() == 0.0:
        raise NoOverlapError("reference raster and target grid do not overlap")
    pop = ref.counts.reshape(ref.grid.n_rows, ref.grid.n_cols)
    out = fy.T @ pop @ fx   # (tgt_rows, tgt_cols)
    return out.ravel()


@dataclass
class ZonalTotals:
    zone_ids: list[str]
    timestamps: list[datetime]
    totals: np.ndarray          # (n_zones, n_slices)
    empty_zones: list[str]      # zones containing no cell centroid


def zone_assignment(grid: GridSpec, zones: ZonalPopulation) -> np.ndarray:
    """Zone index per cell by the centroid rule, -1 where unassigned.

    A centroid inside two zones means the zones overlap; that raises with
    the offending pairs listed.
    """
    from .grid import cell_centroid

    assign = np.full(grid.n_cells, -1, dtype=int)
    conflicts = []
    for cell in range(grid.n_cells):
        lon, lat = cell_centroid(grid, cell)
        hits = [zi for zi, z in enumerate(zones.zones)
                if geometry.point_in_polygon(lon, lat, z.polygon)]
        if len(hits) > 1:
            ids = [zones.zones[h].zone_id for h in hits]
            conflicts.extend((a, b) for a in ids for b in ids if a < b)
        elif hits:
            assign[cell] = hits[0]
    if conflicts:
        raise ZoneOverlapError(conflicts)
    return assign


def zonal_sum(slices: SliceSet, zones: ZonalPopulation, variable: str) -> ZonalTotals:
    """Per-zone, per-timestamp totals of a slice variable.

    A cell contributes to the single zone containing its centroid; missing
    records simply do not contribute.
    """
    assign = zone_assignment(slices.grid, zones)
    nz = len(zones.zones)
    totals = np.zeros((nz, slices.n_slices))
    for t, sl in enumerate(slices.slices):
        for cell, rec in sl.records.items():
            zi = assign[cell]
            if zi < 0:
                continue
            v = record_value(rec, variable)
            if v is not None:
                totals[zi, t] += v
    empty = [z.zone_id for zi, z in enumerate(zones.zones) if not (assign == zi).any()]
    return ZonalTotals(zone_ids=[z.zone_id for z in zones.zones],
                       timestamps=slices.timestamps, totals=totals,
                       empty_zones=empty)


def square_to_hex_transfer(values: np.ndarray, src: GridSpec, hexes: GridSpec,
                           mode: str = "count",
                           missing: np.ndarray | None = None):
    """Transfer a per-cell field from a square lattice onto hexagons.

    ``count`` mode apportions each square's value by overlapped area
    fraction (mass conserving when the hexagons cover the squares);
    ``mean`` mode returns the area-weighted mean, appropriate for
    intensive variables like z-scores. Returns (hex_values, hex_missing).
    """
    if src.scheme != "square" or hexes.scheme != "hexagon":
        raise PopcubeError("square_to_hex_transfer needs a square source and hexagon target")
    if mode not in ("count", "mean"):
        raise PopcubeError(f"unknown transfer mode: {mode!r}")
    values = np.asarray(values, float)
    if missing is None:
        missing = np.isnan(values)
    s = src.cell_size_m
    cell_area = s * s
    out = np.zeros(hexes.n_cells)
    den = np.zeros(hexes.n_cells)
    any_overlap = False
    for h in range(hexes.n_cells):
        ring = hexes.cell_polygon_xy(h)
        lons, lats = zip(*[hexes.to_lonlat(x, y) for x, y in ring])
        xs, ys = src.to_local(np.array(lons), np.array(lats))
        poly = list(zip(xs.tolist(), ys.tolist()))
        c0 = max(0, math.floor(min(xs) / s))
        c1 = min(src.n_cols - 1, math.floor(max(xs) / s))
        r0 = max(0, math.floor(min(ys) / s))
        r1 = min(src.n_rows - 1, math.floor(max(ys) / s))
        for row in range(r0, r1 + 1):
            for col in range(c0, c1 + 1):
                clipped = geometry.clip_polygon_rect(
                    poly, col * s, row * s, (col + 1) * s, (row + 1) * s)
                if not clipped:
                    continue
                a = geometry.polygon_area(clipped)
                if a <= 0.0:
                    continue
                any_overlap = True
                cell = src.cell_index(col, row)
                if missing[cell]:
                    continue
                if mode == "count":
                    out[h] += values[cell] * (a / cell_area)
                    den[h] += a
                else:
                    out[h] += values[cell] * a
                    den[h] += a
    if not any_overlap:
        raise NoOverlapError("hexagon lattice does not overlap the square grid")
    hex_missing = den == 0.0
    if mode == "mean":
        with np.errstate(invalid="ignore"):
            out = np.where(hex_missing, np.nan, out / np.where(den == 0, 1.0, den))
    else:
        out = np.where(hex_missing, np.nan, out)
    return out, hex_missing
