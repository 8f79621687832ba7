"""Independent oracles the tests check the library against.

These deliberately take different computational routes: brute-force pair
enumeration for the trend statistic, straight loops over the closed form
for the local deviate, quadrature for the normal tail, the normal
equations for regression, and shapely polygon intersections for area
weights (the library's own clipping is hand-rolled).
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
from scipy.integrate import quad


def mk_brute(values, missing=None):
    """S, Var(S), n by direct pair enumeration and tie counting."""
    xs = []
    for i, v in enumerate(values):
        if missing is not None and missing[i]:
            continue
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        xs.append(float(v))
    n = len(xs)
    s = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            d = xs[j] - xs[i]
            s += (d > 0) - (d < 0)
    ties = Counter(xs)
    tie_term = sum(t * (t - 1) * (2 * t + 5) for t in ties.values())
    var = (n * (n - 1) * (2 * n + 5) - tie_term) / 18.0
    return s, var, n


def normal_two_sided_p(z_abs: float) -> float:
    """Two-sided tail probability by numerical integration of the pdf."""
    pdf = lambda u: math.exp(-u * u / 2.0) / math.sqrt(2.0 * math.pi)
    tail, _ = quad(pdf, z_abs, np.inf)
    return 2.0 * tail


def gi_brute(field_2d, queen_range: int = 1, missing_2d=None):
    """Straight-loop evaluation of the local deviate on a square lattice.

    Neighborhoods are recomputed from (row, col) offsets rather than any
    library weights structure. Returns an array with NaN where undefined.
    """
    field = np.asarray(field_2d, float)
    rows, cols = field.shape
    valid = np.isfinite(field)
    if missing_2d is not None:
        valid &= ~np.asarray(missing_2d, bool)
    xs = [field[r, c] for r in range(rows) for c in range(cols) if valid[r, c]]
    n = len(xs)
    xbar = sum(xs) / n
    d = math.sqrt(sum(v * v for v in xs) / n - xbar * xbar)
    out = np.full(rows * cols, np.nan)
    if d <= 0.0:
        return out
    for r in range(rows):
        for c in range(cols):
            if not valid[r, c]:
                continue
            wx = 0.0
            wsum = 0
            for dr in range(-queen_range, queen_range + 1):
                for dc in range(-queen_range, queen_range + 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and valid[rr, cc]:
                        wx += field[rr, cc]
                        wsum += 1
            denom = d * math.sqrt((n * wsum - wsum * wsum) / (n - 1))
            if denom > 0.0:
                out[r * cols + c] = (wx - xbar * wsum) / denom
    return out


def ols_normal_equations(x, y):
    """Slope/intercept by solving the 2x2 normal equations directly."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    a = np.array([[np.sum(x * x), np.sum(x)], [np.sum(x), float(len(x))]])
    b = np.array([np.sum(x * y), np.sum(y)])
    slope, intercept = np.linalg.solve(a, b)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def shapely_cell_box(grid, cell):
    """Lon/lat shapely box of a square grid cell."""
    from shapely.geometry import box

    col, row = grid.cell_colrow(cell)
    s = grid.cell_size_m
    lon0, lat0 = grid.to_lonlat(col * s, row * s)
    lon1, lat1 = grid.to_lonlat((col + 1) * s, (row + 1) * s)
    return box(float(lon0), float(lat0), float(lon1), float(lat1))


def resample_brute(ref, target):
    """Area-weighted reallocation via shapely polygon intersections."""
    out = np.zeros(target.n_cells)
    tgt_boxes = [shapely_cell_box(target, c) for c in range(target.n_cells)]
    for sc in range(ref.grid.n_cells):
        src_box = shapely_cell_box(ref.grid, sc)
        area = src_box.area
        pop = ref.counts[sc]
        if pop == 0.0:
            continue
        for tc, tb in enumerate(tgt_boxes):
            inter = src_box.intersection(tb)
            if not inter.is_empty:
                out[tc] += pop * (inter.area / area)
    return out


def hex_transfer_brute(values, src, hexes, mode="count"):
    """Square-to-hexagon transfer via shapely intersections in lon/lat."""
    from shapely.geometry import Polygon

    from popcube.grid import cell_polygon

    values = np.asarray(values, float)
    out = np.zeros(hexes.n_cells)
    den = np.zeros(hexes.n_cells)
    src_boxes = [shapely_cell_box(src, c) for c in range(src.n_cells)]
    src_areas = [b.area for b in src_boxes]
    for h in range(hexes.n_cells):
        hex_poly = Polygon(cell_polygon(hexes, h))
        for sc, sb in enumerate(src_boxes):
            inter = hex_poly.intersection(sb)
            if inter.is_empty or not np.isfinite(values[sc]):
                continue
            a = inter.area
            if mode == "count":
                out[h] += values[sc] * (a / src_areas[sc])
            else:
                out[h] += values[sc] * a
                den[h] += a
    if mode == "mean":
        with np.errstate(invalid="ignore"):
            out = np.where(den > 0, out / np.where(den == 0, 1, den), np.nan)
    return out
