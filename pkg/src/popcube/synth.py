"""Synthetic crisis-scenario generator with closed-form ground truth.

A scenario plays out on a lattice as three stages per evacuation order:
geometric decay of the zone's population toward a floor while the order
is active, reapportionment of the displaced mass onto shelters (by uptake
fraction, capped by capacity) and onto the cells adjacent to the zone
(the remainder, equal shares), then geometric recovery toward baseline
once the order lifts. Decay and recovery snap to their asymptote once the
outstanding mass per cell falls below half a count, so the dip bottoms
out after a seed-independent number of slices set by the egress rate.

Baselines are stamp-specific: the emitted baseline and its dispersion are
both scaled by the diurnal multiplier, which keeps z-scores free of the
diurnal cycle. Additive noise on crisis counts is truncated at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, PopcubeError
from .grid import GridSpec, NeighborScheme, cell_centroid, neighbors
from .ingest import (
    CANONICAL_STAMPS,
    SIGMA_MIN_DEFAULT,
    SliceRecord,
    SliceSet,
    TimeSlice,
    parse_timestamp,
)
from .stcube import ORDER_LIFTED, ORDER_PLACED, EventTimeline, TimelineEvent

DEFAULT_START = datetime(2020, 1, 1, 1, 0, tzinfo=timezone.utc)
SLICE_HOURS = 8

ROLE_EVACUATED = "evacuated"
ROLE_SHELTER = "shelter"
ROLE_DESTINATION = "adjacent_destination"
ROLE_UNAFFECTED = "unaffected"

# Expected-trend codes reuse the spot polarity convention: +1 up, -1 down.
TREND_TOL_Z = 0.5


@dataclass(frozen=True)
class EvacParams:
    egress_rate: float = 0.5
    floor: float = 0.1
    return_rate: float = 0.6

    def __post_init__(self):
        if not (0.0 < self.egress_rate <= 1.0):
            raise ConfigError("egress_rate must be in (0, 1]")
        if not (0.0 < self.return_rate <= 1.0):
            raise ConfigError("return_rate must be in (0, 1]")
        if not (0.0 <= self.floor < 1.0):
            raise ConfigError("floor must be in [0, 1)")


@dataclass(frozen=True)
class Shelter:
    cell: int
    capacity: float
    uptake: float

    def __post_init__(self):
        if self.capacity < 0 or not (0.0 <= self.uptake <= 1.0):
            raise ConfigError("shelter needs capacity >= 0 and uptake in [0, 1]")


@dataclass
class ScenarioConfig:
    grid: GridSpec
    duration_slices: int
    baseline: np.ndarray          # per-cell mean baseline population
    baseline_sigma: np.ndarray    # per-cell baseline dispersion
    diurnal_multipliers: dict[time, float]
    events: EventTimeline
    evac_params: EvacParams = field(default_factory=EvacParams)
    shelters: list[Shelter] = field(default_factory=list)
    noise_sigma: float = 2.0
    seed: int = 0
    start: datetime = DEFAULT_START
    stamp_times: tuple[time, ...] = CANONICAL_STAMPS
    sigma_min: float = SIGMA_MIN_DEFAULT

    def __post_init__(self):
        self.baseline = np.asarray(self.baseline, float)
        self.baseline_sigma = np.asarray(self.baseline_sigma, float)
        n = self.grid.n_cells
        if self.baseline.shape != (n,) or self.baseline_sigma.shape != (n,):
            raise ConfigError("baseline fields must carry one value per cell")
        if (self.baseline < 0).any() or (self.baseline_sigma < 0).any():
            raise ConfigError("baseline fields must be non-negative")
        if self.duration_slices < 1:
            raise ConfigError("duration_slices must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for stamp in self.stamp_times:
            if self.diurnal_multipliers.get(stamp, 0.0) <= 0.0:
                raise ConfigError(f"diurnal multiplier for {stamp} must be positive")

    def timestamp(self, t: int) -> datetime:
        return self.start + timedelta(hours=SLICE_HOURS * t)

    def stamp(self, t: int) -> time:
        return self.stamp_times[t % len(self.stamp_times)]


@dataclass
class GroundTruth:
    """What the generator guarantees, for recovery tests.

    ``expected_trend`` maps section labels to per-cell codes (+1 expected
    increase, -1 expected decrease, 0 no expectation); ``expected_polarity``
    uses +1 hot, -1 cold, 0 none.
    """

    roles: np.ndarray                      # object array of role names
    expected_trend: dict[str, np.ndarray]
    expected_polarity: np.ndarray
    section_bounds: dict[str, tuple[int, int]]

    def cells_with_role(self, role: str) -> np.ndarray:
        return np.nonzero(self.roles == role)[0]


@dataclass
class _OrderPair:
    zone: np.ndarray      # cell ids
    placed_slice: int
    lifted_slice: int | None
    ring: np.ndarray      # destination cells


def _event_slice(config: ScenarioConfig, instant: datetime) -> int:
    # first slice at or after the instant, mirroring the sectioning rule
    for t in range(config.duration_slices):
        if config.timestamp(t) >= instant:
            return t
    return config.duration_slices


def _pair_events(config: ScenarioConfig) -> list[_OrderPair]:
    by_zone: dict[frozenset, dict[str, int]] = {}
    for ev in config.events.events:
        if ev.kind not in (ORDER_PLACED, ORDER_LIFTED):
            continue
        if ev.zone is None:
            raise ConfigError(f"event {ev.label!r}: evacuation events need a zone mask")
        slot = by_zone.setdefault(ev.zone, {})
        if ev.kind in slot:
            raise ConfigError(f"zone has more than one {ev.kind} event")
        slot[ev.kind] = _event_slice(config, ev.instant)
    all_zone_cells = set()
    for zone in by_zone:
        all_zone_cells.update(zone)
    shelter_cells = {s.cell for s in config.shelters}
    if shelter_cells & all_zone_cells:
        raise ConfigError("shelters cannot sit inside an evacuation zone")
    pairs = []
    for zone, slots in by_zone.items():
        if ORDER_PLACED not in slots:
            raise ConfigError("order_lifted event without a matching order_placed")
        placed = slots[ORDER_PLACED]
        lifted = slots.get(ORDER_LIFTED)
        if lifted is not None and lifted <= placed:
            raise ConfigError("order_lifted must come after order_placed")
        cells = np.array(sorted(zone), dtype=int)
        for c in cells:
            config.grid._check(int(c))
        ring = sorted(
            set(n for c in cells
                for n in neighbors(config.grid, int(c), NeighborScheme(include_self=False)))
            - all_zone_cells - shelter_cells)
        pairs.append(_OrderPair(zone=cells, placed_slice=placed, lifted_slice=lifted,
                                ring=np.array(ring, dtype=int)))
    return pairs


def _validate(config: ScenarioConfig, pairs: list[_OrderPair]):
    for s in config.shelters:
        if not (0 <= s.cell < config.grid.n_cells):
            raise ConfigError(f"shelter cell {s.cell} outside grid")
    total_uptake = sum(s.uptake for s in config.shelters)
    if total_uptake > 1.0 + 1e-12:
        raise ConfigError(f"total shelter uptake {total_uptake:.3f} exceeds 1")
    if pairs and total_uptake < 1.0 and not any(p.ring.size for p in pairs):
        raise ConfigError("no destination cells available for the displaced remainder")


def _occupancy(config: ScenarioConfig, pairs: list[_OrderPair]) -> np.ndarray:
    """Noise-free occupancy fraction per cell per slice, 1 where unaffected."""
    n, T = config.grid.n_cells, config.duration_slices
    f = np.ones((n, T))
    ev = config.evac_params
    for pair in pairs:
        base = config.baseline[pair.zone]
        for t in range(T):
            if t <= pair.placed_slice:
                continue
            if pair.lifted_slice is None or t <= pair.lifted_slice:
                j = t - pair.placed_slice
                excess = (1.0 - ev.floor) * (1.0 - ev.egress_rate) ** j
                excess = np.where(excess * base < 0.5, 0.0, excess)
                f[pair.zone, t] = ev.floor + excess
            else:
                jl = pair.lifted_slice - pair.placed_slice
                excess_l = (1.0 - ev.floor) * (1.0 - ev.egress_rate) ** jl
                excess_l = np.where(excess_l * base < 0.5, 0.0, excess_l)
                deficit0 = 1.0 - (ev.floor + excess_l)
                k = t - pair.lifted_slice
                deficit = deficit0 * (1.0 - ev.return_rate) ** k
                deficit = np.where(deficit * base < 0.5, 0.0, deficit)
                f[pair.zone, t] = 1.0 - deficit
    return f


def generate(config: ScenarioConfig) -> tuple[SliceSet, GroundTruth]:
    """Run the scenario; deterministic for a given config and seed."""
    pairs = _pair_events(config)
    _validate(config, pairs)
    grid = config.grid
    n, T = grid.n_cells, config.duration_slices
    f = _occupancy(config, pairs)
    rng = np.random.default_rng(config.seed)

    evac_cells = np.concatenate([p.zone for p in pairs]) if pairs else np.array([], dtype=int)
    ring_cells = (np.unique(np.concatenate([p.ring for p in pairs if p.ring.size]))
                  if any(p.ring.size for p in pairs) else np.array([], dtype=int))
    shelter_idx = np.array([s.cell for s in config.shelters], dtype=int)

    centroids = [cell_centroid(grid, c) for c in range(n)]
    slices = []
    clean_z = np.zeros((n, T))
    for t in range(T):
        mult = config.diurnal_multipliers[config.stamp(t)]
        base_t = config.baseline * mult
        sigma_t = config.baseline_sigma * mult
        crisis = base_t * f[:, t]
        displaced = float((base_t[evac_cells] * (1.0 - f[evac_cells, t])).sum()) if evac_cells.size else 0.0
        remainder = displaced
        for s in config.shelters:
            intake = min(s.uptake * displaced, s.capacity)
            crisis[s.cell] += intake
            remainder -= intake
        if remainder > 0.0 and ring_cells.size:
            crisis[ring_cells] += remainder / ring_cells.size
        clean_z[:, t] = (crisis - base_t) / np.maximum(sigma_t, config.sigma_min)
        if config.noise_sigma > 0.0:
            crisis = np.maximum(crisis + rng.normal(0.0, config.noise_sigma, n), 0.0)

        ts = config.timestamp(t)
        records = {}
        for c in range(n):
            b, cr, sg = float(base_t[c]), float(crisis[c]), float(sigma_t[c])
            diff = cr - b
            records[c] = SliceRecord(
                timestamp=ts, cell=c, n_baseline=b, n_crisis=cr, n_difference=diff,
                percent_change=100.0 * diff / b if b > 0 else None,
                z_score=diff / max(sg, config.sigma_min), baseline_sigma=sg)
        slices.append(TimeSlice(timestamp=ts, stamp=config.stamp(t), records=records))

    slice_set = SliceSet(grid=grid, slices=slices)
    truth = _ground_truth(config, pairs, clean_z, evac_cells, ring_cells, shelter_idx)
    return slice_set, truth


def _ground_truth(config, pairs, clean_z, evac_cells, ring_cells, shelter_idx) -> GroundTruth:
    n, T = config.grid.n_cells, config.duration_slices
    roles = np.full(n, ROLE_UNAFFECTED, dtype=object)
    roles[evac_cells] = ROLE_EVACUATED
    roles[ring_cells] = ROLE_DESTINATION
    roles[shelter_idx] = ROLE_SHELTER

    polarity = np.zeros(n, dtype=np.int8)
    polarity[evac_cells] = -1
    polarity[ring_cells] = 1
    polarity[shelter_idx] = 1

    # section bounds mirror section_by_events on the generated timestamps
    boundaries = [(0, "start")]
    for ev in config.events.events:
        idx = _event_slice(config, ev.instant)
        if 0 < idx < T:
            boundaries.append((idx, ev.label))
    boundaries.sort()
    expected: dict[str, np.ndarray] = {}
    bounds: dict[str, tuple[int, int]] = {}
    for k, (start, label) in enumerate(boundaries):
        end = boundaries[k + 1][0] if k + 1 < len(boundaries) else T
        if end <= start:
            continue
        dz = clean_z[:, end - 1] - clean_z[:, start]
        codes = np.zeros(n, dtype=np.int8)
        codes[dz > TREND_TOL_Z] = 1
        codes[dz < -TREND_TOL_Z] = -1
        expected[label] = codes
        bounds[label] = (start, end)
    return GroundTruth(roles=roles, expected_trend=expected,
                       expected_polarity=polarity, section_bounds=bounds)


# -- emission and scenario files -------------------------------------------

def emit_fbdm_csv(slices: SliceSet, path) -> list[Path]:
    """Write the slice CSV schema so that parse_slices reads back an equal
    SliceSet. Missing cells are absent rows, never zeros; floats use repr
    so values round-trip bit-exactly."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)

    def fmt(v):
        return "" if v is None else repr(float(v))

    lonlat_cache: dict[int, str] = {}
    lines = ["timestamp,lon,lat,n_baseline,n_crisis,n_difference,percent_change,z_score,baseline_sigma"]
    for sl in slices.slices:
        ts = sl.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        for cell in sorted(sl.records):
            rec = sl.records[cell]
            lonlat = lonlat_cache.get(cell)
            if lonlat is None:
                lon, lat = cell_centroid(slices.grid, cell)
                lonlat = f"{lon!r},{lat!r}"
                lonlat_cache[cell] = lonlat
            lines.append(",".join([
                ts, lonlat, fmt(rec.n_baseline), fmt(rec.n_crisis),
                fmt(rec.n_difference), fmt(rec.percent_change), fmt(rec.z_score),
                fmt(rec.baseline_sigma)]))
    try:
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise PopcubeError(f"cannot write {p}: {exc}") from exc
    return [p]


def uniform_baseline(grid: GridSpec, level: float, sigma_frac: float = 0.1,
                     sigma_floor: float = 1.0):
    base = np.full(grid.n_cells, float(level))
    sigma = np.maximum(base * sigma_frac, sigma_floor)
    return base, sigma


def gradient_baseline(grid: GridSpec, level: float, sigma_frac: float = 0.1,
                      sigma_floor: float = 1.0):
    """Smooth planar gradient from 0.6x to 1.4x the level across the grid."""
    idx = np.arange(grid.n_cells)
    cols = idx % grid.n_cols
    rows = idx // grid.n_cols
    span = max(grid.n_cols + grid.n_rows - 2, 1)
    g = (cols + rows) / span
    base = level * (0.6 + 0.8 * g)
    sigma = np.maximum(base * sigma_frac, sigma_floor)
    return base, sigma


def cells_in_rect(grid: GridSpec, col0: int, row0: int, col1: int, row1: int) -> list[int]:
    """Cell ids of an inclusive (col, row) rectangle."""
    out = []
    for row in range(row0, row1 + 1):
        for col in range(col0, col1 + 1):
            out.append(grid.cell_index(col, row))
    return out


def _zone_from_json(grid: GridSpec, spec) -> frozenset[int]:
    if spec is None:
        return None
    if "rect" in spec:
        return frozenset(cells_in_rect(grid, *spec["rect"]))
    if "cells" in spec:
        return frozenset(int(c) for c in spec["cells"])
    raise ConfigError("zone must give 'rect' or 'cells'")


def load_scenario(path) -> ScenarioConfig:
    """Scenario configuration from JSON; see scenarios/ for a full example."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        grid = GridSpec.from_json_dict(doc["grid"])
        duration = int(doc["duration_slices"])
        start = parse_timestamp(doc.get("start", DEFAULT_START.isoformat()))
        stamps = tuple(_parse_stamp(s) for s in doc.get("stamp_times", ["01:00", "09:00", "17:00"]))
        mults = {_parse_stamp(k): float(v)
                 for k, v in doc.get("diurnal_multipliers", {}).items()}
        for st in stamps:
            mults.setdefault(st, 1.0)
        base_spec = doc.get("baseline", {"kind": "uniform", "level": 100.0})
        if base_spec.get("kind", "uniform") != "uniform":
            raise ConfigError("only 'uniform' baseline specs are supported in files")
        base, sigma = uniform_baseline(grid, float(base_spec.get("level", 100.0)),
                                       float(base_spec.get("sigma_frac", 0.1)),
                                       float(base_spec.get("sigma_floor", 1.0)))
        events = []
        for ev in doc.get("events", []):
            if "slice" in ev:
                instant = start + timedelta(hours=SLICE_HOURS * int(ev["slice"]))
            else:
                instant = parse_timestamp(ev["time"])
            events.append(TimelineEvent(instant=instant, kind=ev["kind"],
                                        label=ev["label"],
                                        zone=_zone_from_json(grid, ev.get("zone"))))
        shelters = []
        for sh in doc.get("shelters", []):
            cell = sh["cell"]
            if isinstance(cell, (list, tuple)):
                cell = grid.cell_index(int(cell[0]), int(cell[1]))
            shelters.append(Shelter(cell=int(cell), capacity=float(sh["capacity"]),
                                    uptake=float(sh["uptake"])))
        ep = doc.get("evac_params", {})
        return ScenarioConfig(
            grid=grid, duration_slices=duration, baseline=base, baseline_sigma=sigma,
            diurnal_multipliers=mults, events=EventTimeline(events=tuple(events)),
            evac_params=EvacParams(egress_rate=float(ep.get("egress_rate", 0.5)),
                                   floor=float(ep.get("floor", 0.1)),
                                   return_rate=float(ep.get("return_rate", 0.6))),
            shelters=shelters, noise_sigma=float(doc.get("noise_sigma", 2.0)),
            seed=int(doc.get("seed", 0)), start=start, stamp_times=stamps)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing scenario key {exc}") from exc


def _parse_stamp(text: str) -> time:
    hh, mm = text.split(":")
    return time(int(hh), int(mm))


DEFAULT_MULTIPLIERS = {time(1, 0): 0.85, time(9, 0): 1.10, time(17, 0): 1.05}


def _scenario(grid_n: int, zone_rect, order_slice: int, lift_slice: int | None,
              duration: int, egress: float, shelters_spec, seed: int,
              noise_sigma: float, level: float = 100.0,
              return_rate: float = 0.6, gradient: bool = False) -> ScenarioConfig:
    from .grid import _M_PER_DEG_LAT, _m_per_deg_lon

    origin = (-119.0, 34.0)
    anchor_lat = origin[1] + grid_n * 1000.0 / 2.0 / _M_PER_DEG_LAT
    anchor = (origin[0] + grid_n * 1000.0 / 2.0 / _m_per_deg_lon(anchor_lat), anchor_lat)
    grid = GridSpec(scheme="square", origin=origin, cell_size_m=1000.0,
                    n_cols=grid_n, n_rows=grid_n, anchor=anchor)
    make = gradient_baseline if gradient else uniform_baseline
    base, sigma = make(grid, level)
    start = DEFAULT_START
    events = []
    if zone_rect is not None:
        zone = frozenset(cells_in_rect(grid, *zone_rect))
        events.append(TimelineEvent(instant=start + timedelta(hours=SLICE_HOURS * order_slice),
                                    kind=ORDER_PLACED, label="order:zone_a", zone=zone))
        if lift_slice is not None:
            events.append(TimelineEvent(instant=start + timedelta(hours=SLICE_HOURS * lift_slice),
                                        kind=ORDER_LIFTED, label="lift:zone_a", zone=zone))
    shelters = [Shelter(cell=grid.cell_index(c, r), capacity=cap, uptake=up)
                for (c, r, cap, up) in shelters_spec]
    return ScenarioConfig(grid=grid, duration_slices=duration, baseline=base,
                          baseline_sigma=sigma, diurnal_multipliers=dict(DEFAULT_MULTIPLIERS),
                          events=EventTimeline(events=tuple(events)),
                          evac_params=EvacParams(egress_rate=egress, floor=0.1,
                                                 return_rate=return_rate),
                          shelters=shelters, noise_sigma=noise_sigma, seed=seed, start=start)


def default_evacuation_scenario(seed: int = 0, noise_sigma: float = 2.0) -> ScenarioConfig:
    """100x100 grid, 36 slices, one 10x10 zone ordered out at slice 6 and
    lifted at slice 22, five shelters taking 40% of the displaced mass."""
    shelters = [(20, 20, 10000.0, 0.08), (20, 70, 10000.0, 0.08), (70, 20, 10000.0, 0.08),
                (70, 70, 10000.0, 0.08), (55, 75, 10000.0, 0.08)]
    return _scenario(100, (40, 40, 49, 49), 6, 22, 36, 0.5, shelters, seed, noise_sigma,
                     gradient=True)


def no_event_scenario(seed: int = 0, noise_sigma: float = 2.0, grid_n: int = 100,
                      duration: int = 36) -> ScenarioConfig:
    return _scenario(grid_n, None, 0, None, duration, 0.5, [], seed, noise_sigma)


def fast_egress_scenario(seed: int = 0, noise_sigma: float = 2.0) -> ScenarioConfig:
    """Dense-region profile: the dip completes four slices after the order."""
    shelters = [(4, 4, 8000.0, 0.15), (25, 25, 8000.0, 0.15)]
    return _scenario(30, (10, 10, 19, 19), 5, 10, 24, 0.75, shelters, seed, noise_sigma)


def slow_egress_scenario(seed: int = 0, noise_sigma: float = 2.0) -> ScenarioConfig:
    """Sparse-region profile: the dip takes nine slices to complete."""
    shelters = [(4, 4, 8000.0, 0.15), (25, 25, 8000.0, 0.15)]
    return _scenario(30, (10, 10, 19, 19), 3, 13, 24, 0.45, shelters, seed, noise_sigma)
