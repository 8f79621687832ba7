"""Spatial lattice: cell identity, geometry, neighborhoods, and weights.

Cells are laid out on a local equirectangular plane anchored at the extent
centroid; geodesic distortion over sub-200-km study areas is accepted.
Square lattices are row-major. Hexagon lattices are pointy-top with odd
rows shifted half a cell to the left; neighbor logic runs through axial
coordinates. Cell ids are plain non-negative ints (``CellId``) so they can
index numpy arrays directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import ConfigError, InvalidExtentError, OutOfRangeError

CellId = int

EARTH_RADIUS_M = 6_371_000.0
_M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

SQUARE = "square"
HEXAGON = "hexagon"

CONTIGUITY = "contiguity_incl_self"
DISTANCE_BAND = "fixed_distance_band"

# Axial direction set shared by both hexagon parities.
_HEX_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


def _m_per_deg_lon(lat_deg: float) -> float:
    return _M_PER_DEG_LAT * math.cos(math.radians(lat_deg))


@dataclass(frozen=True)
class NeighborScheme:
    """Neighborhood rule used to build binary spatial weights.

    ``contiguity_incl_self`` is queen contiguity on squares and the 6-ring
    on hexagons. ``fixed_distance_band`` takes every cell whose centroid
    lies within ``radius_m``. Weights are binary either way.
    """

    kind: str = CONTIGUITY
    radius_m: float | None = None
    include_self: bool = True

    def __post_init__(self):
        if self.kind not in (CONTIGUITY, DISTANCE_BAND):
            raise ConfigError(f"unknown neighbor scheme kind: {self.kind!r}")
        if self.kind == DISTANCE_BAND and self.radius_m is None:
            raise ConfigError("fixed_distance_band requires radius_m")


@dataclass(frozen=True)
class GridSpec:
    """Immutable geometry of the analysis lattice.

    ``origin`` is the lon/lat of the lower-left footprint corner; ``anchor``
    is the lon/lat the equirectangular plane is anchored at (usually the
    extent centroid). ``cell_size_m`` is the cell pitch: edge length for
    squares, across-flats width for hexagons.
    """

    scheme: str
    origin: tuple[float, float]
    cell_size_m: float
    n_cols: int
    n_rows: int
    anchor: tuple[float, float] = None  # type: ignore[assignment]
    crs_note: str = field(default="", compare=False)

    def __post_init__(self):
        if self.scheme not in (SQUARE, HEXAGON):
            raise ConfigError(f"unknown grid scheme: {self.scheme!r}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ConfigError("grid needs n_cols >= 1 and n_rows >= 1")
        if not self.cell_size_m > 0:
            raise ConfigError("cell_size_m must be positive")
        if self.anchor is None:
            object.__setattr__(self, "anchor", self.origin)
        if not self.crs_note:
            note = f"equirect@({self.anchor[0]:.6f},{self.anchor[1]:.6f})"
            object.__setattr__(self, "crs_note", note)

    # -- identity ---------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def cell_index(self, col: int, row: int) -> CellId:
        if not (0 <= col < self.n_cols and 0 <= row < self.n_rows):
            raise OutOfRangeError(f"(col={col}, row={row}) outside {self.n_cols}x{self.n_rows} grid")
        return row * self.n_cols + col

    def cell_colrow(self, cell: CellId) -> tuple[int, int]:
        self._check(cell)
        return cell % self.n_cols, cell // self.n_cols

    def _check(self, cell: CellId):
        if not (0 <= cell < self.n_cells):
            raise OutOfRangeError(f"cell id {cell} outside grid of {self.n_cells} cells")

    # -- local plane ------------------------------------------------------

    def to_local(self, lon, lat):
        """Degrees -> meters relative to the footprint's lower-left corner."""
        kx = _m_per_deg_lon(self.anchor[1])
        x = (np.asarray(lon, float) - self.origin[0]) * kx
        y = (np.asarray(lat, float) - self.origin[1]) * _M_PER_DEG_LAT
        return x, y

    def to_lonlat(self, x, y):
        kx = _m_per_deg_lon(self.anchor[1])
        lon = self.origin[0] + np.asarray(x, float) / kx
        lat = self.origin[1] + np.asarray(y, float) / _M_PER_DEG_LAT
        return lon, lat

    @property
    def _hex_size(self) -> float:
        # Circumradius of the pointy-top hexagon with across-flats width
        # equal to cell_size_m.
        return self.cell_size_m / math.sqrt(3.0)

    def centroid_xy(self, cell: CellId) -> tuple[float, float]:
        col, row = self.cell_colrow(cell)
        s = self.cell_size_m
        if self.scheme == SQUARE:
            return (col + 0.5) * s, (row + 0.5) * s
        h = self._hex_size
        x = s * col + s / 2.0 - (row & 1) * s / 2.0
        y = h / 2.0 + 1.5 * h * row
        return x, y

    def cell_polygon_xy(self, cell: CellId) -> list[tuple[float, float]]:
        """Counterclockwise ring of the cell in local meters (not closed)."""
        col, row = self.cell_colrow(cell)
        s = self.cell_size_m
        if self.scheme == SQUARE:
            x0, y0 = col * s, row * s
            return [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
        cx, cy = self.centroid_xy(cell)
        h = self._hex_size
        ring = []
        for k in range(6):
            ang = math.radians(60.0 * k + 30.0)
            ring.append((cx + h * math.cos(ang), cy + h * math.sin(ang)))
        return ring

    def cell_at(self, lon: float, lat: float) -> CellId | None:
        """Cell containing a lon/lat point, or None when outside the grid."""
        # scalar math only: this sits on the per-row hot path of the parser
        x = (lon - self.origin[0]) * _m_per_deg_lon(self.anchor[1])
        y = (lat - self.origin[1]) * _M_PER_DEG_LAT
        if self.scheme == SQUARE:
            s = self.cell_size_m
            col = math.floor(x / s)
            row = math.floor(y / s)
            if 0 <= col < self.n_cols and 0 <= row < self.n_rows:
                return self.cell_index(col, row)
            return None
        q, r = self._axial_at(x, y)
        col, row = _from_axial(q, r)
        if 0 <= col < self.n_cols and 0 <= row < self.n_rows:
            return self.cell_index(col, row)
        return None

    def _axial_at(self, x: float, y: float) -> tuple[int, int]:
        h = self._hex_size
        xr = x - self.cell_size_m / 2.0
        yr = y - h / 2.0
        qf = (math.sqrt(3.0) / 3.0 * xr - yr / 3.0) / h
        rf = (2.0 / 3.0 * yr) / h
        return _cube_round(qf, rf)

    # -- coverage ---------------------------------------------------------

    def extent(self) -> tuple[float, float, float, float]:
        """Lon/lat bounding box guaranteed to be covered by the lattice."""
        s = self.cell_size_m
        if self.scheme == SQUARE:
            w, hgt = self.n_cols * s, self.n_rows * s
        else:
            h = self._hex_size
            w = self.n_cols * s - s / 2.0
            hgt = 1.5 * h * (self.n_rows - 1) + h
        lon1, lat1 = self.to_lonlat(w, hgt)
        return self.origin[0], self.origin[1], float(lon1), float(lat1)

    # -- persistence ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "origin": list(self.origin),
            "cell_size_m": self.cell_size_m,
            "n_cols": self.n_cols,
            "n_rows": self.n_rows,
            "anchor": list(self.anchor),
            "crs_note": self.crs_note,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GridSpec":
        return cls(
            scheme=d["scheme"],
            origin=tuple(d["origin"]),
            cell_size_m=float(d["cell_size_m"]),
            n_cols=int(d["n_cols"]),
            n_rows=int(d["n_rows"]),
            anchor=tuple(d["anchor"]) if d.get("anchor") else None,
            crs_note=d.get("crs_note", ""),
        )


def _cube_round(qf: float, rf: float) -> tuple[int, int]:
    xf, zf = qf, rf
    yf = -xf - zf
    rx, ry, rz = round(xf), round(yf), round(zf)
    dx, dy, dz = abs(rx - xf), abs(ry - yf), abs(rz - zf)
    if dx > dy and dx > dz:
        rx = -ry - rz
    elif dy > dz:
        ry = -rx - rz
    else:
        rz = -rx - ry
    return int(rx), int(rz)


def _to_axial(col: int, row: int) -> tuple[int, int]:
    return col - (row + (row & 1)) // 2, row


def _from_axial(q: int, r: int) -> tuple[int, int]:
    return q + (r + (r & 1)) // 2, r


def build_grid(extent: tuple[float, float, float, float], cell_size_m: float,
               scheme: str = SQUARE) -> GridSpec:
    """Build the minimal lattice covering a lon/lat extent.

    ``extent`` is (lon_min, lat_min, lon_max, lat_max). Cell counts are the
    smallest that fully cover the extent (ceiling rule); hexagon lattices
    include the extra half-column and half-row margins that full coverage
    of a rectangle requires.
    """
    lon0, lat0, lon1, lat1 = extent
    if not (lon1 > lon0 and lat1 > lat0):
        raise InvalidExtentError(f"degenerate extent: {extent}")
    if not cell_size_m > 0:
        raise ConfigError("cell_size_m must be positive")
    anchor = ((lon0 + lon1) / 2.0, (lat0 + lat1) / 2.0)
    width = (lon1 - lon0) * _m_per_deg_lon(anchor[1])
    height = (lat1 - lat0) * _M_PER_DEG_LAT
    eps = 1e-9
    if scheme == SQUARE:
        n_cols = max(1, math.ceil(width / cell_size_m - eps))
        n_rows = max(1, math.ceil(height / cell_size_m - eps))
    elif scheme == HEXAGON:
        h = cell_size_m / math.sqrt(3.0)
        n_cols = max(1, math.ceil(width / cell_size_m + 0.5 - eps))
        n_rows = max(1, math.ceil((height - h) / (1.5 * h) - eps) + 1)
    else:
        raise ConfigError(f"unknown grid scheme: {scheme!r}")
    return GridSpec(scheme=scheme, origin=(lon0, lat0), cell_size_m=cell_size_m,
                    n_cols=n_cols, n_rows=n_rows, anchor=anchor)


def neighbors(grid: GridSpec, cell: CellId,
              scheme: NeighborScheme | None = None) -> list[CellId]:
    """Neighbor ids of a cell in ascending order.

    Includes the cell itself when the scheme says so; never returns
    out-of-grid ids.
    """
    if scheme is None:
        scheme = NeighborScheme()
    grid._check(cell)
    if scheme.kind == DISTANCE_BAND:
        _check_band(grid, scheme)
        cx, cy = grid.centroid_xy(cell)
        xs, ys = _all_centroids(grid)
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        ids = np.nonzero(d2 <= scheme.radius_m ** 2 + 1e-6)[0].tolist()
        if not scheme.include_self:
            ids = [i for i in ids if i != cell]
        return ids
    col, row = grid.cell_colrow(cell)
    out = []
    if grid.scheme == SQUARE:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                c, r = col + dc, row + dr
                if 0 <= c < grid.n_cols and 0 <= r < grid.n_rows:
                    out.append(grid.cell_index(c, r))
    else:
        q, r = _to_axial(col, row)
        cand = [(q, r)] + [(q + dq, r + dr) for dq, dr in _HEX_DIRS]
        for qq, rr in cand:
            c, w = _from_axial(qq, rr)
            if 0 <= c < grid.n_cols and 0 <= w < grid.n_rows:
                out.append(grid.cell_index(c, w))
    if not scheme.include_self:
        out = [i for i in out if i != cell]
    return sorted(out)


def cell_centroid(grid: GridSpec, cell: CellId) -> tuple[float, float]:
    """Lon/lat of the cell centroid."""
    x, y = grid.centroid_xy(cell)
    lon, lat = grid.to_lonlat(x, y)
    return float(lon), float(lat)


def cell_polygon(grid: GridSpec, cell: CellId) -> list[tuple[float, float]]:
    """Counterclockwise lon/lat ring of the cell (not closed)."""
    ring = grid.cell_polygon_xy(cell)
    out = []
    for x, y in ring:
        lon, lat = grid.to_lonlat(x, y)
        out.append((float(lon), float(lat)))
    return out


def _all_centroids(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    s = grid.cell_size_m
    idx = np.arange(grid.n_cells)
    cols = idx % grid.n_cols
    rows = idx // grid.n_cols
    if grid.scheme == SQUARE:
        return (cols + 0.5) * s, (rows + 0.5) * s
    h = grid._hex_size
    xs = s * cols + s / 2.0 - (rows & 1) * s / 2.0
    ys = h / 2.0 + 1.5 * h * rows
    return xs.astype(float), ys

def _check_band(grid: GridSpec, scheme: NeighborScheme):
    if scheme.radius_m < grid.cell_size_m:
        raise ConfigError("fixed_distance_band radius_m must be >= cell_size_m")


def weights_matrix(grid: GridSpec, scheme: NeighborScheme | None = None) -> sparse.csr_matrix:
    """Binary spatial weights for the whole lattice as CSR (rows sorted)."""
    if scheme is None:
        scheme = NeighborScheme()
    n = grid.n_cells
    if scheme.kind == DISTANCE_BAND:
        _check_band(grid, scheme)
        xs, ys = _all_centroids(grid)
        pts = np.column_stack([xs, ys])
        tree = cKDTree(pts)
        rows, cols = [], []
        for i, nbrs in enumerate(tree.query_ball_point(pts, scheme.radius_m + 1e-6)):
            for j in nbrs:
                if j == i and not scheme.include_self:
                    continue
                rows.append(i)
                cols.append(j)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    idx = np.arange(n)
    gcols = idx % grid.n_cols
    grows = idx // grid.n_cols
    rows, cols = [], []
    if grid.scheme == SQUARE:
        offsets = [(dc, dr) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
        for dc, dr in offsets:
            if dc == 0 and dr == 0 and not scheme.include_self:
                continue
            c, r = gcols + dc, grows + dr
            ok = (c >= 0) & (c < grid.n_cols) & (r >= 0) & (r < grid.n_rows)
            rows.append(idx[ok])
            cols.append((r * grid.n_cols + c)[ok])
    else:
        q = gcols - (grows + (grows & 1)) // 2
        dirs = list(_HEX_DIRS)
        if scheme.include_self:
            dirs.append((0, 0))
        for dq, dr in dirs:
            qq, rr = q + dq, grows + dr
            c = qq + (rr + (rr & 1)) // 2
            ok = (c >= 0) & (c < grid.n_cols) & (rr >= 0) & (rr < grid.n_rows)
            rows.append(idx[ok])
            cols.append((rr * grid.n_cols + c)[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    w.sort_indices()
    return w


def save_grid(grid: GridSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid.to_json_dict(), fh, indent=2)
        fh.write("\n")


def load_grid(path) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return GridSpec.from_json_dict(json.load(fh))
