"""Per-slice local hot/cold spot deviates and per-cell emerging
classification over a cube.

The local statistic for cell i over binary weights w (self included) is

    G_i* = [sum_j w_ij x_j - xbar * W_i] /
           (D * sqrt((n * W_i - W_i^2) / (n - 1))),

with W_i the neighbor count, xbar and D the mean and root mean square
deviation of the field over the analysis region, and n the number of
usable cells. Missing cells contribute neither to global moments nor to
neighbor sums, and a constant field masks every cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConfigError, TooShortError, TooSparseError
from .grid import GridSpec, NeighborScheme, weights_matrix
from .stcube import SpaceTimeCube
from .trend import (
    DEFAULT_ALPHA,
    MIN_SERIES_LENGTH,
    NONE,
    TrendClass,
    _z_p_tau,
    mk_batch,
)

CONFIDENCE_THRESHOLDS = {90: 1.645, 95: 1.960, 99: 2.576}
DEFAULT_BIN = 90

HOT, COLD = 1, -1
LABEL_NAMES = {HOT: "hot", COLD: "cold", 0: "none"}

CAT_NEW = "new"
CAT_STABLE = "stable"
CAT_UNSTABLE = "unstable"
CAT_NONE = "none"

MIN_EMERGING_SLICES = 8


@dataclass
class GiStarField:
    """Per-cell deviates for one slice; masked where undefined."""

    values: np.ndarray
    masked: np.ndarray
    scheme: NeighborScheme
    all_constant: bool = False


@dataclass
class SpotLabelField:
    labels: np.ndarray        # int8: +1 hot, -1 cold, 0 none
    masked: np.ndarray
    confidence_bin: int


@dataclass
class SpotLabelCube:
    labels: np.ndarray        # (n_cells, n_slices) int8
    masked: np.ndarray
    confidence_bin: int


@dataclass
class EmergingCategory:
    category: str             # new | unstable | stable | none
    polarity: str             # hot | cold | none
    intensity_trend: TrendClass | None


@dataclass
class EmergingResult:
    """Per-cell emerging classification over a label cube."""

    category: np.ndarray      # object array of category names
    polarity: np.ndarray      # object array of polarity names
    intensity_direction: np.ndarray
    intensity_p: np.ndarray
    excluded: np.ndarray      # cells missing too often to classify

    def cell(self, cell: int, alpha: float = DEFAULT_ALPHA) -> EmergingCategory:
        trend = None
        if np.isfinite(self.intensity_p[cell]):
            trend = TrendClass(direction=str(self.intensity_direction[cell]), alpha=alpha)
        return EmergingCategory(category=str(self.category[cell]),
                                polarity=str(self.polarity[cell]),
                                intensity_trend=trend)


def gi_star(values, grid: GridSpec, scheme: NeighborScheme | None = None,
            missing: np.ndarray | None = None,
            region: np.ndarray | None = None,
            weights: sparse.csr_matrix | None = None) -> GiStarField:
    """Local deviate of one slice against the regional field.

    ``region`` restricts both the global moments and the output to an
    analysis mask; cells are masked where the statistic is undefined
    (outside the region, missing, zero dispersion, or a neighborhood that
    swallows the whole region).
    """
    if scheme is None:
        scheme = NeighborScheme()
    x = np.asarray(values, float)
    n_cells = grid.n_cells
    if x.shape != (n_cells,):
        raise TooSparseError(f"field must have {n_cells} values")
    valid = np.isfinite(x)
    if missing is not None:
        valid &= ~np.asarray(missing, bool)
    if region is not None:
        valid &= np.asarray(region, bool)
    n = int(valid.sum())
    if n < 2:
        raise TooSparseError(f"need >= 2 usable cells, got {n}")
    xv = x[valid]
    xbar = xv.mean()
    d = np.sqrt(np.maximum((xv ** 2).mean() - xbar ** 2, 0.0))
    if d <= 0.0:
        return GiStarField(values=np.full(n_cells, np.nan),
                           masked=np.ones(n_cells, dtype=bool),
                           scheme=scheme, all_constant=True)
    w = weights if weights is not None else weights_matrix(grid, scheme)
    xf = np.where(valid, x, 0.0)
    wx = w @ xf
    wsum = w @ valid.astype(float)
    # binary weights: sum of squared weights equals the neighbor count
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = d * np.sqrt((n * wsum - wsum ** 2) / (n - 1))
        gi = (wx - xbar * wsum) / denom
    masked = ~valid | (wsum == 0) | (denom <= 0) | ~np.isfinite(gi)
    gi = np.where(masked, np.nan, gi)
    return GiStarField(values=gi, masked=masked, scheme=scheme)


def gi_star_cube(cube: SpaceTimeCube, scheme: NeighborScheme | None = None,
                 region: np.ndarray | None = None) -> SpaceTimeCube:
    """Apply the per-slice statistic across a cube; masks become missing."""
    if scheme is None:
        scheme = NeighborScheme()
    w = weights_matrix(cube.grid, scheme)
    values = np.full_like(cube.values, np.nan)
    missing = np.ones_like(cube.missing)
    for t in range(cube.n_slices):
        try:
            f = gi_star(cube.values[:, t], cube.grid, scheme,
                        missing=cube.missing[:, t], region=region, weights=w)
        except TooSparseError:
            continue
        values[:, t] = f.values
        missing[:, t] = f.masked
    return SpaceTimeCube(grid=cube.grid, timestamps=list(cube.timestamps),
                         values=values, missing=missing, variable="gi_star")


def classify_spots(gi: GiStarField, confidence_bin: int = DEFAULT_BIN) -> SpotLabelField:
    """Threshold the deviates into hot/cold/none at a confidence bin."""
    thr = _threshold(confidence_bin)
    labels = np.zeros(gi.values.shape, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        labels[~gi.masked & (gi.values >= thr)] = HOT
        labels[~gi.masked & (gi.values <= -thr)] = COLD
    return SpotLabelField(labels=labels, masked=gi.masked.copy(),
                          confidence_bin=confidence_bin)


def _threshold(confidence_bin: int) -> float:
    if confidence_bin not in CONFIDENCE_THRESHOLDS:
        raise ConfigError(f"confidence bin must be one of {sorted(CONFIDENCE_THRESHOLDS)}")
    return CONFIDENCE_THRESHOLDS[confidence_bin]


def label_cube(gi_cube: SpaceTimeCube, confidence_bin: int = DEFAULT_BIN) -> SpotLabelCube:
    """Per-slice spot labels stacked over the cube."""
    thr = _threshold(confidence_bin)
    labels = np.zeros(gi_cube.values.shape, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        labels[~gi_cube.missing & (gi_cube.values >= thr)] = HOT
        labels[~gi_cube.missing & (gi_cube.values <= -thr)] = COLD
    return SpotLabelCube(labels=labels, masked=gi_cube.missing.copy(),
                         confidence_bin=confidence_bin)


def emerging_classify(labels: SpotLabelCube, gi_cube: SpaceTimeCube,
                      alpha: float = DEFAULT_ALPHA,
                      new_earlier_max: float = 0.10,
                      stable_min: float = 0.80,
                      max_missing_frac: float = 0.5) -> EmergingResult:
    """Categorize each cell's hot/cold significance history.

    Over the cell's usable slices (the last one acting as "final"):

    * none     -- never significant;
    * new      -- significant in the final slice and in at most
                  ``new_earlier_max`` of the earlier slices;
    * stable   -- significant in at least ``stable_min`` of the slices,
                  final included;
    * unstable -- any other intermittent pattern, and any cell whose
                  significant labels mix hot and cold (polarity then
                  follows the last significant slice).

    Cells missing in more than ``max_missing_frac`` of the slices are
    excluded and come back as none/none with the flag set. The intensity
    trend is the Mann-Kendall direction of the raw deviate series.
    """
    lab = labels.labels
    usable = ~labels.masked
    C, T = lab.shape
    if T < MIN_EMERGING_SLICES:
        raise TooShortError(f"emerging classification needs >= {MIN_EMERGING_SLICES} slices")

    category = np.full(C, CAT_NONE, dtype=object)
    polarity = np.full(C, "none", dtype=object)
    excluded = usable.sum(axis=1) < (1.0 - max_missing_frac) * T

    s, var, n = mk_batch(gi_cube.values, gi_cube.missing)
    z, p, tau = _z_p_tau(s, var, n)
    intensity_dir = np.full(C, NONE, dtype=object)
    ok = n >= MIN_SERIES_LENGTH
    sig = ok & (p < alpha)
    intensity_dir[sig & (s > 0)] = "increasing"
    intensity_dir[sig & (s < 0)] = "decreasing"
    intensity_p = np.where(ok, p, np.nan)

    for cell in range(C):
        if excluded[cell]:
            continue
        cols = np.nonzero(usable[cell])[0]
        if cols.size == 0:
            continue
        seq = lab[cell, cols]
        sig_idx = np.nonzero(seq != 0)[0]
        if sig_idx.size == 0:
            continue
        kinds = set(int(k) for k in seq[sig_idx])
        final_sig = seq[-1] != 0
        if len(kinds) > 1:
            category[cell] = CAT_UNSTABLE
            polarity[cell] = LABEL_NAMES[int(seq[sig_idx[-1]])]
            continue
        polarity[cell] = LABEL_NAMES[kinds.pop()]
        m = seq.size
        earlier = sig_idx[sig_idx < m - 1].size
        frac_all = sig_idx.size / m
        if final_sig and (m == 1 or earlier / (m - 1) <= new_earlier_max):
            category[cell] = CAT_NEW
        elif final_sig and frac_all >= stable_min:
            category[cell] = CAT_STABLE
        else:
            category[cell] = CAT_UNSTABLE

    return EmergingResult(category=category, polarity=polarity,
                          intensity_direction=intensity_dir,
                          intensity_p=intensity_p, excluded=excluded)
