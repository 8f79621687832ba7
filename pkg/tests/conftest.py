import math

import numpy as np
import pytest

from popcube.grid import _M_PER_DEG_LAT, GridSpec, _m_per_deg_lon


def extent_for_meters(width_m: float, height_m: float,
                      lon0: float = -119.0, lat0: float = 34.0):
    """Lon/lat extent whose projected size is (width_m, height_m)."""
    lat1 = lat0 + height_m / _M_PER_DEG_LAT
    anchor_lat = (lat0 + lat1) / 2.0
    lon1 = lon0 + width_m / _m_per_deg_lon(anchor_lat)
    return (lon0, lat0, lon1, lat1)


def square_grid(n_cols: int, n_rows: int, cell_size_m: float = 1000.0,
                lon0: float = -119.0, lat0: float = 34.0) -> GridSpec:
    anchor_lat = lat0 + n_rows * cell_size_m / 2.0 / _M_PER_DEG_LAT
    anchor_lon = lon0 + n_cols * cell_size_m / 2.0 / _m_per_deg_lon(anchor_lat)
    return GridSpec(scheme="square", origin=(lon0, lat0), cell_size_m=cell_size_m,
                    n_cols=n_cols, n_rows=n_rows, anchor=(anchor_lon, anchor_lat))


@pytest.fixture
def grid5() -> GridSpec:
    return square_grid(5, 5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def assert_close(a, b, tol=1e-12, msg=""):
    a, b = float(a), float(b)
    assert math.isfinite(a) and math.isfinite(b), f"non-finite: {a} vs {b} {msg}"
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b} (tol {tol}) {msg}"
