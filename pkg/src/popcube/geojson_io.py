"""GeoJSON layer writers: cell lattices, trend maps, spot labels, and
emerging categories. One Feature per cell, polygon rings closed and
counterclockwise, properties kept flat and JSON-native.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .grid import GridSpec, cell_polygon
from .hotspot import LABEL_NAMES, EmergingResult, SpotLabelField
from .trend import SectionTrendMap


def _ring(grid: GridSpec, cell: int) -> list[list[float]]:
    ring = [[x, y] for x, y in cell_polygon(grid, cell)]
    ring.append(list(ring[0]))
    return ring


def _feature(grid: GridSpec, cell: int, props: dict) -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [_ring(grid, cell)]},
        "properties": {"cell_id": int(cell), **props},
    }


def _collection(features: list[dict]) -> dict:
    return {"type": "FeatureCollection", "features": features}


def write_geojson(doc: dict, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
    return p


def grid_layer(grid: GridSpec) -> dict:
    """Bare lattice: one polygon Feature per cell with its id."""
    return _collection([_feature(grid, c, {}) for c in range(grid.n_cells)])


def field_layer(grid: GridSpec, name: str, values, missing=None,
                extra: dict[str, np.ndarray] | None = None) -> dict:
    """Per-cell numeric field; masked cells are omitted."""
    values = np.asarray(values, float)
    feats = []
    for cell in range(grid.n_cells):
        if missing is not None and missing[cell]:
            continue
        if not math.isfinite(values[cell]):
            continue
        props = {name: float(values[cell])}
        if extra:
            for key, arr in extra.items():
                v = arr[cell]
                props[key] = v.item() if hasattr(v, "item") else v
        feats.append(_feature(grid, cell, props))
    return _collection(feats)


def trend_layer(grid: GridSpec, trends: SectionTrendMap) -> dict:
    """Per-cell direction/p/tau for one section; unusable cells omitted."""
    feats = []
    for cell in range(grid.n_cells):
        if not trends.usable[cell]:
            continue
        feats.append(_feature(grid, cell, {
            "section_label": trends.section.label,
            "direction": str(trends.direction[cell]),
            "p": float(trends.p[cell]),
            "tau": float(trends.tau[cell]),
        }))
    return _collection(feats)


def spots_layer(grid: GridSpec, spots: SpotLabelField, gi_values) -> dict:
    """Significant hot/cold cells of one slice with their deviate."""
    feats = []
    for cell in np.nonzero(spots.labels != 0)[0]:
        feats.append(_feature(grid, int(cell), {
            "gi": float(gi_values[cell]),
            "label": LABEL_NAMES[int(spots.labels[cell])],
            "bin": int(spots.confidence_bin),
        }))
    return _collection(feats)


def emerging_layer(grid: GridSpec, emerging: EmergingResult) -> dict:
    """Every classified cell with category, polarity, and intensity trend."""
    feats = []
    for cell in range(grid.n_cells):
        if emerging.excluded[cell]:
            continue
        p = emerging.intensity_p[cell]
        feats.append(_feature(grid, cell, {
            "category": str(emerging.category[cell]),
            "polarity": str(emerging.polarity[cell]),
            "intensity_dir": str(emerging.intensity_direction[cell]),
            "intensity_p": float(p) if math.isfinite(p) else None,
        }))
    return _collection(feats)
