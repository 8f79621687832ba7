"""Command line: penetration, dynamics, trend, emerging, synth, run-all.

Every command reads its inputs from flags or a JSON config file (flags
win), writes CSV tables, GeoJSON layers, and SVG charts into the output
directory, and is deterministic given the same inputs. Exit codes:
0 success, 2 usage/config error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from datetime import timezone
from pathlib import Path

import numpy as np

from . import geojson_io, report
from .errors import ConfigError, PopcubeError
from .geometry import point_in_polygon
from .grid import GridSpec, NeighborScheme, cell_centroid, load_grid, save_grid
from .hotspot import (
    DEFAULT_BIN,
    GiStarField,
    MIN_EMERGING_SLICES,
    classify_spots,
    emerging_classify,
    gi_star_cube,
    label_cube,
)
from .ingest import (
    SliceSet,
    parse_slices,
    read_raster_ascii,
    read_raster_csv,
    read_zones_geojson,
    resample_to_grid,
    zone_assignment,
)
from .metrics import (
    average_baseline,
    demographic_correlation,
    diurnal_average,
    fit_penetration,
    penetration_field,
    regional_mean_z,
    total_difference,
)
from .stcube import EventTimeline, TimelineEvent, build_cube, section_by_events
from .synth import (
    GroundTruth,
    default_evacuation_scenario,
    emit_fbdm_csv,
    generate,
    load_scenario,
)
from .trend import DEFAULT_ALPHA, cell_section_trends, tipping_points_cube

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


@dataclass
class PipelineConfig:
    slices: str | None = None
    grid: str | None = None
    raster: str | None = None
    raster_grid: str | None = None
    zones: str | None = None
    events: str | None = None
    mask: str | None = None
    scenario: str | None = None
    out: str = "out"
    alpha: float = DEFAULT_ALPHA
    confidence_bin: int = DEFAULT_BIN
    window: int = 6
    seed: int | None = None
    neighbor_scheme: str = "contiguity_incl_self"
    radius_m: float | None = None

    @classmethod
    def load(cls, args: argparse.Namespace) -> "PipelineConfig":
        cfg = cls()
        if getattr(args, "config", None):
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
            known = {f.name for f in fields(cls)}
            unknown = set(doc) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
            for k, v in doc.items():
                setattr(cfg, k, v)
        for f in fields(cls):
            v = getattr(args, f.name, None)
            if v is not None:
                setattr(cfg, f.name, v)
        if not (0.0 < cfg.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0, 1), got {cfg.alpha}")
        if cfg.confidence_bin not in (90, 95, 99):
            raise ConfigError(f"confidence bin must be 90, 95, or 99, got {cfg.confidence_bin}")
        return cfg

    def scheme(self) -> NeighborScheme:
        return NeighborScheme(kind=self.neighbor_scheme, radius_m=self.radius_m)

    def require(self, *names: str):
        for name in names:
            path = getattr(self, name)
            if not path:
                raise ConfigError(f"missing required input: --{name.replace('_', '-')}")
            if not Path(path).exists():
                raise ConfigError(f"input path does not exist: {path}")


def _load_slices(cfg: PipelineConfig) -> SliceSet:
    cfg.require("slices", "grid")
    return parse_slices(cfg.slices, load_grid(cfg.grid))


def _load_events(path, grid: GridSpec) -> EventTimeline:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    from .ingest import parse_timestamp
    from .synth import _zone_from_json

    events = []
    for ev in doc.get("events", []):
        events.append(TimelineEvent(
            instant=parse_timestamp(ev["time"]), kind=ev["kind"], label=ev["label"],
            zone=_zone_from_json(grid, ev.get("zone"))))
    return EventTimeline(events=tuple(events))


def _load_mask(path, grid: GridSpec) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "cells" in doc:
        cells = [int(c) for c in doc["cells"]]
    elif doc.get("type") in ("FeatureCollection", "Feature", "Polygon"):
        polys = []
        if doc["type"] == "Polygon":
            polys.append(doc["coordinates"][0])
        elif doc["type"] == "Feature":
            polys.append(doc["geometry"]["coordinates"][0])
        else:
            polys = [f["geometry"]["coordinates"][0] for f in doc["features"]]
        cells = []
        for cell in range(grid.n_cells):
            lon, lat = cell_centroid(grid, cell)
            if any(point_in_polygon(lon, lat, poly) for poly in polys):
                cells.append(cell)
    else:
        raise ConfigError(f"{path}: mask must give 'cells' or GeoJSON polygons")
    if not cells:
        raise ConfigError(f"{path}: mask selects no cells")
    return cells


def _events_json(timeline: EventTimeline) -> dict:
    out = []
    for ev in timeline.events:
        entry = {"time": ev.instant.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "kind": ev.kind, "label": ev.label}
        if ev.zone is not None:
            entry["zone"] = {"cells": sorted(int(c) for c in ev.zone)}
        out.append(entry)
    return {"events": out}


def _write_json(doc, path):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return p


def _ground_truth_csv(truth: GroundTruth, path):
    import csv as _csv

    labels = sorted(truth.expected_trend)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["cell_id", "role", "expected_polarity"]
                   + [f"trend:{lab}" for lab in labels])
        code = {1: "increasing", -1: "decreasing", 0: "none"}
        pol = {1: "hot", -1: "cold", 0: "none"}
        for cell in range(len(truth.roles)):
            w.writerow([cell, truth.roles[cell], pol[int(truth.expected_polarity[cell])]]
                       + [code[int(truth.expected_trend[lab][cell])] for lab in labels])


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> int:
    if cfg.scenario:
        cfg.require("scenario")
        scenario = load_scenario(cfg.scenario)
    else:
        scenario = default_evacuation_scenario()
    if cfg.seed is not None:
        scenario.seed = cfg.seed
    slices, truth = generate(scenario)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_fbdm_csv(slices, out / "slices.csv")
    save_grid(scenario.grid, out / "grid.json")
    _write_json(_events_json(scenario.events), out / "events.json")
    _ground_truth_csv(truth, out / "ground_truth.csv")
    evac = truth.cells_with_role("evacuated")
    _write_json({"cells": [int(c) for c in evac]}, out / "mask_evacuated.json")
    print(f"synth: {slices.n_slices} slices x {scenario.grid.n_cells} cells -> {out}")
    return EXIT_OK


def cmd_penetration(cfg: PipelineConfig, slices: SliceSet | None = None) -> int:
    slices = slices if slices is not None else _load_slices(cfg)
    if not cfg.raster and not cfg.zones:
        raise ConfigError("penetration needs --raster (with --raster-grid) or --zones")
    out = Path(cfg.out)
    mean_fbp, fbp_missing = average_baseline(slices)
    fbp = np.where(fbp_missing, np.nan, mean_fbp)
    regressions = []
    exceptions = []
    diurnal_written = False

    if cfg.raster:
        if str(cfg.raster).endswith((".asc", ".txt")):
            cfg.require("raster")
            ref = read_raster_ascii(cfg.raster)
        else:
            cfg.require("raster", "raster_grid")
            ref = read_raster_csv(cfg.raster, cfg.raster_grid)
        pop = ref.counts if ref.grid == slices.grid else resample_to_grid(ref, slices.grid)
        rates, undefined, over = penetration_field(fbp, pop)
        geojson_io.write_geojson(
            geojson_io.field_layer(slices.grid, "pen_rate", rates,
                                   extra={"mean_fbp": fbp, "ref_pop": pop}),
            out / "penetration_cells.geojson")
        regressions.append(("raster", fit_penetration(fbp, pop)))
        for cell in np.nonzero(undefined & ~fbp_missing)[0]:
            exceptions.append((int(cell), "undefined_rate", float(pop[cell])))
        for cell in np.nonzero(over)[0]:
            exceptions.append((int(cell), "over_100", float(rates[cell])))
        report.scatter_fit_svg(pop, fbp, regressions[-1][1],
                               out / "penetration_scatter_raster.svg",
                               "reference population", "mean baseline population",
                               "Baseline population vs reference (cells)")
        covered = ~fbp_missing & (pop > 0)
        if covered.any():
            series = []
            for sl in slices.slices:
                users = sum(r.n_baseline for c, r in sl.records.items() if covered[c])
                series.append(100.0 * users / pop[covered].sum())
            stats = diurnal_average(slices.timestamps, series)
            report.write_diurnal_csv(stats, out / "diurnal.csv")
            diurnal_written = True

    if cfg.zones:
        cfg.require("zones")
        zones = read_zones_geojson(cfg.zones)
        assign = zone_assignment(slices.grid, zones)
        users_z = np.zeros(len(zones.zones))
        for zi in range(len(zones.zones)):
            cells = np.nonzero(assign == zi)[0]
            users_z[zi] = np.nansum(fbp[cells]) if cells.size else np.nan
        pop_z = np.array([z.population for z in zones.zones])
        rates_z, undef_z, over_z = penetration_field(users_z, pop_z)
        for zi in np.nonzero(undef_z)[0]:
            exceptions.append((zones.zones[zi].zone_id, "undefined_rate", float(pop_z[zi])))
        try:
            regressions.append(("zones", fit_penetration(users_z, pop_z)))
            report.scatter_fit_svg(pop_z, users_z, regressions[-1][1],
                                   out / "penetration_scatter_zones.svg",
                                   "zone population", "summed baseline population",
                                   "Baseline population vs reference (zones)")
        except PopcubeError as exc:
            exceptions.append(("zones", "fit_failed", str(exc)))
        cohort_keys = sorted({k for z in zones.zones for k in z.cohort_shares})
        for key in cohort_keys:
            shares = np.array([z.cohort_shares.get(key, np.nan) for z in zones.zones])
            try:
                regressions.append((key, demographic_correlation(rates_z, shares)))
            except PopcubeError:
                pass
        if not diurnal_written and pop_z.sum() > 0:
            zoned = assign >= 0
            series = []
            for sl in slices.slices:
                users = sum(r.n_baseline for c, r in sl.records.items() if zoned[c])
                series.append(100.0 * users / pop_z.sum())
            report.write_diurnal_csv(diurnal_average(slices.timestamps, series),
                                     out / "diurnal.csv")

    report.write_regression_csv(regressions, out / "regression.csv")
    report.write_exceptions_csv(exceptions, ["unit", "reason", "value"],
                                out / "exceptions.csv")
    print(f"penetration: {len(regressions)} fits -> {out}")
    return EXIT_OK


def cmd_dynamics(cfg: PipelineConfig, slices: SliceSet | None = None) -> int:
    slices = slices if slices is not None else _load_slices(cfg)
    mask = (_load_mask(cfg.mask, slices.grid) if cfg.mask
            else list(range(slices.grid.n_cells)))
    timeline = _load_events(cfg.events, slices.grid) if cfg.events else None
    out = Path(cfg.out)
    regional = regional_mean_z(slices, mask)
    report.write_regional_csv(regional, out / "regional_z.csv")
    report.series_svg(regional, out / "regional_z.svg", "mean z-score",
                      "Regional z-score dynamics", timeline)
    totals = total_difference(slices, mask)
    report.write_regional_csv(totals, out / "total_difference.csv")
    report.series_svg(totals, out / "total_difference.svg", "summed population difference",
                      "Total population difference", timeline)
    print(f"dynamics: {regional.mean.size} slices over {len(mask)} cells -> {out}")
    return EXIT_OK


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label)


def cmd_trend(cfg: PipelineConfig, slices: SliceSet | None = None) -> int:
    slices = slices if slices is not None else _load_slices(cfg)
    cfg.require("events")
    timeline = _load_events(cfg.events, slices.grid)
    out = Path(cfg.out)
    cube = build_cube(slices, "z_score")
    sections = section_by_events(cube, timeline)
    tmaps = cell_section_trends(cube, sections, alpha=cfg.alpha)
    warnings_log = []
    for i, tm in enumerate(tmaps):
        n_unusable = int((~tm.usable).sum())
        if n_unusable:
            warnings_log.append(
                f"section {tm.section.label!r} [{tm.section.start},{tm.section.end}): "
                f"{n_unusable} cells too short after masking")
        geojson_io.write_geojson(
            geojson_io.trend_layer(slices.grid, tm),
            out / f"trend_{i:02d}_{_safe(tm.section.label)}.geojson")
    if cube.n_slices >= 2 * cfg.window:
        points = tipping_points_cube(cube, cfg.window, alpha=cfg.alpha)
        report.write_tipping_csv(points, cube.timestamps, out / "tipping.csv")
    else:
        warnings_log.append(f"cube of {cube.n_slices} slices too short for window "
                            f"{cfg.window}; tipping table skipped")
    (out / "warnings.txt").write_text(
        "".join(line + "\n" for line in warnings_log), encoding="utf-8")
    print(f"trend: {len(tmaps)} sections -> {out}")
    return EXIT_OK


def cmd_emerging(cfg: PipelineConfig, slices: SliceSet | None = None) -> int:
    slices = slices if slices is not None else _load_slices(cfg)
    out = Path(cfg.out)
    cube = build_cube(slices, "z_score")
    if cube.n_slices < MIN_EMERGING_SLICES:
        raise ConfigError(f"emerging analysis needs >= {MIN_EMERGING_SLICES} slices, "
                          f"got {cube.n_slices}")
    region = None
    if cfg.mask:
        cells = _load_mask(cfg.mask, slices.grid)
        region = np.zeros(slices.grid.n_cells, dtype=bool)
        region[cells] = True
    scheme = cfg.scheme()
    gi = gi_star_cube(cube, scheme, region=region)
    labels = label_cube(gi, cfg.confidence_bin)
    for t in range(gi.n_slices):
        field = classify_spots(
            _gi_field(gi, t, scheme), cfg.confidence_bin)
        geojson_io.write_geojson(
            geojson_io.spots_layer(slices.grid, field, gi.values[:, t]),
            out / "spots" / f"spots_t{t:03d}.geojson")
    emerging = emerging_classify(labels, gi, alpha=cfg.alpha)
    geojson_io.write_geojson(geojson_io.emerging_layer(slices.grid, emerging),
                             out / "emerging.geojson")
    report.write_category_summary_csv(emerging, out / "category_summary.csv")
    print(f"emerging: {gi.n_slices} slices classified -> {out}")
    return EXIT_OK


def _gi_field(gi_cube, t, scheme) -> GiStarField:
    return GiStarField(values=gi_cube.values[:, t], masked=gi_cube.missing[:, t],
                       scheme=scheme)


def cmd_run_all(cfg: PipelineConfig) -> int:
    out = Path(cfg.out)
    rc = cmd_synth(cfg)
    if rc:
        return rc
    cfg.slices = str(out / "slices.csv")
    cfg.grid = str(out / "grid.json")
    cfg.events = str(out / "events.json")
    cfg.mask = str(out / "mask_evacuated.json")

    # demo reference raster: a tenth of the population uses the platform
    grid = load_grid(cfg.grid)
    slices = parse_slices(cfg.slices, grid)
    mean_fbp, missing = average_baseline(slices)
    import csv as _csv

    raster_path = out / "reference_raster.csv"
    with open(raster_path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["lon", "lat", "population"])
        for cell in range(grid.n_cells):
            lon, lat = cell_centroid(grid, cell)
            pop = 0.0 if missing[cell] else 10.0 * float(mean_fbp[cell])
            w.writerow([repr(lon), repr(lat), repr(pop)])
    cfg.raster = str(raster_path)
    cfg.raster_grid = cfg.grid

    for step, sub_out in ((cmd_penetration, "penetration"), (cmd_dynamics, "dynamics"),
                          (cmd_trend, "trend"), (cmd_emerging, "emerging")):
        sub = PipelineConfig(**{f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)})
        sub.out = str(out / sub_out)
        rc = step(sub, slices=slices)
        if rc:
            return rc
    print(f"run-all: full walkthrough -> {out}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file with PipelineConfig keys")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--alpha", type=float, help="significance level (default 0.05)")
    p.add_argument("--bin", dest="confidence_bin", type=int, choices=(90, 95, 99),
                   help="hot/cold confidence bin (default 90)")
    p.add_argument("--window", type=int, help="tipping-point window in slices (default 6)")
    p.add_argument("--seed", type=int, help="scenario seed override")
    p.add_argument("--slices", help="slice CSV path")
    p.add_argument("--grid", help="grid descriptor JSON path")
    p.add_argument("--events", help="event timeline JSON path")
    p.add_argument("--mask", help="analysis mask (cell list JSON or GeoJSON polygon)")
    p.add_argument("--raster", help="reference raster CSV (or .asc)")
    p.add_argument("--raster-grid", dest="raster_grid", help="raster grid descriptor JSON")
    p.add_argument("--zones", help="zonal polygons GeoJSON")
    p.add_argument("--scenario", help="scenario JSON for synth/run-all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popcube",
        description="Analytics for gridded 8-hour population slices: penetration, "
                    "z-score dynamics, trends, hot/cold spots, synthetic scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("penetration", "representativeness: fits, rates, diurnal cycle", cmd_penetration),
        ("dynamics", "regional z-score and total-difference series", cmd_dynamics),
        ("trend", "per-cell section trends and tipping points", cmd_trend),
        ("emerging", "hot/cold spots per slice and emerging categories", cmd_emerging),
        ("synth", "generate a synthetic scenario feed with ground truth", cmd_synth),
        ("run-all", "synth then the full analysis chain", cmd_run_all),
    ]
    for name, help_text, fn in specs:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = PipelineConfig.load(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PopcubeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
