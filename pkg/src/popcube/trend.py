"""Mann-Kendall monotonic trend machinery.

The statistic is the classical rank form: S is the sum of pairwise signs
sgn(x_j - x_i) over i < j, the variance is tie-corrected,

    Var(S) = [n(n-1)(2n+5) - sum_g t_g(t_g-1)(2t_g+5)] / 18,

and the normal deviate applies a continuity correction, Z = (S -/+ 1) /
sqrt(Var(S)) with Z = 0 when S = 0. Missing values are dropped before
pairing; time spacing is irrelevant to a rank statistic. Series shorter
than four usable points are refused rather than silently reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import TooShortError
from .stcube import Section, SpaceTimeCube

DEFAULT_ALPHA = 0.05
MIN_SERIES_LENGTH = 4

INCREASING = "increasing"
DECREASING = "decreasing"
NONE = "none"

_CHUNK = 2048


@dataclass(frozen=True)
class TrendClass:
    """Direction decision at a significance level."""

    direction: str
    alpha: float

    def __post_init__(self):
        if self.direction not in (INCREASING, DECREASING, NONE):
            raise ValueError(f"bad direction: {self.direction!r}")


@dataclass(frozen=True)
class MKResult:
    s: int
    var_s: float
    z: float
    p: float            # two-sided
    tau: float          # s normalized by n(n-1)/2
    n_used: int
    trend: TrendClass


@dataclass(frozen=True)
class TippingPoint:
    """First window where the significant rolling direction flips."""

    t_index: int
    from_direction: str
    to_direction: str
    window: int


def _tie_term(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True)
    t = counts[counts > 1].astype(float)
    return float((t * (t - 1) * (2 * t + 5)).sum())


def mk_batch(values: np.ndarray, missing: np.ndarray | None = None):
    """Vectorized S, Var(S), n_used over rows of a (series, time) array.

    NaNs (and masked entries) are excluded pairwise. Rows with fewer
    usable points than needed are the caller's problem; this just reports
    n_used.
    """
    v = np.atleast_2d(np.asarray(values, float))
    valid = np.isfinite(v)
    if missing is not None:
        valid &= ~np.atleast_2d(np.asarray(missing, bool))
    C, T = v.shape
    iu, ju = np.triu_indices(T, k=1)
    s = np.zeros(C)
    ties_present = np.zeros(C, dtype=bool)
    for lo in range(0, C, _CHUNK):
        hi = min(lo + _CHUNK, C)
        x = np.where(valid[lo:hi], v[lo:hi], 0.0)
        diff = x[:, ju] - x[:, iu]
        pair_ok = valid[lo:hi][:, ju] & valid[lo:hi][:, iu]
        s[lo:hi] = (np.sign(diff) * pair_ok).sum(axis=1)
        ties_present[lo:hi] = ((diff == 0.0) & pair_ok).any(axis=1)
    n = valid.sum(axis=1).astype(float)
    # keep the integer numerator intact until the single division by 18 so
    # results agree bitwise with a direct evaluation of the formula
    var_num = n * (n - 1) * (2 * n + 5)
    for row in np.nonzero(ties_present)[0]:
        var_num[row] -= _tie_term(v[row, valid[row]])
    return s, var_num / 18.0, n.astype(int)


def _z_p_tau(s: np.ndarray, var: np.ndarray, n: np.ndarray):
    sd = np.sqrt(np.maximum(var, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, (s - 1) / sd, np.where(s < 0, (s + 1) / sd, 0.0))
    z = np.where(var == 0.0, 0.0, z)
    p = special.erfc(np.abs(z) / np.sqrt(2.0))
    pairs = n * (n - 1) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(pairs > 0, s / pairs, 0.0)
    return z, p, tau


def mk_stat(series, alpha: float = DEFAULT_ALPHA,
            missing: np.ndarray | None = None) -> MKResult:
    """Mann-Kendall statistic bundle for one series.

    An all-ties series is a legitimate degenerate: S = 0, Var(S) = 0,
    Z = 0, p = 1. Fewer than four usable points raise.
    """
    v = np.asarray(series, float).reshape(1, -1)
    m = None if missing is None else np.asarray(missing, bool).reshape(1, -1)
    s, var, n = mk_batch(v, m)
    if n[0] < MIN_SERIES_LENGTH:
        raise TooShortError(f"need >= {MIN_SERIES_LENGTH} usable points, got {int(n[0])}")
    z, p, tau = _z_p_tau(s, var, n)
    direction = NONE
    if p[0] < alpha:
        direction = INCREASING if s[0] > 0 else DECREASING
    return MKResult(s=int(round(s[0])), var_s=float(var[0]), z=float(z[0]),
                    p=float(p[0]), tau=float(tau[0]), n_used=int(n[0]),
                    trend=TrendClass(direction=direction, alpha=alpha))


@dataclass
class SectionTrendMap:
    """Per-cell decisions for one section of a cube."""

    section: Section
    direction: np.ndarray   # object array of direction strings
    p: np.ndarray
    tau: np.ndarray
    n_used: np.ndarray
    usable: np.ndarray      # False where the masked series was too short


def cell_section_trends(cube: SpaceTimeCube, sections: list[Section],
                        alpha: float = DEFAULT_ALPHA,
                        min_len: int = MIN_SERIES_LENGTH) -> list[SectionTrendMap]:
    """Per-cell Mann-Kendall direction inside each event section.

    Cells whose in-section series is too short after masking come back
    flagged (direction none, usable False) instead of raising.
    """
    out = []
    for sec in sections:
        vals = cube.values[:, sec.start:sec.end]
        miss = cube.missing[:, sec.start:sec.end]
        s, var, n = mk_batch(vals, miss)
        z, p, tau = _z_p_tau(s, var, n)
        usable = n >= min_len
        direction = np.full(cube.grid.n_cells, NONE, dtype=object)
        sig = usable & (p < alpha)
        direction[sig & (s > 0)] = INCREASING
        direction[sig & (s < 0)] = DECREASING
        p = np.where(usable, p, np.nan)
        tau = np.where(usable, tau, np.nan)
        out.append(SectionTrendMap(section=sec, direction=direction, p=p,
                                   tau=tau, n_used=n, usable=usable))
    return out


def _window_directions(values: np.ndarray, missing: np.ndarray | None,
                       window: int, alpha: float):
    """Significant direction per rolling window start, codes -1/0/+1,
    with 0 also covering too-short windows."""
    v = np.atleast_2d(np.asarray(values, float))
    C, T = v.shape
    m = None if missing is None else np.atleast_2d(np.asarray(missing, bool))
    starts = T - window + 1
    codes = np.zeros((C, starts), dtype=np.int8)
    for w in range(starts):
        vw = v[:, w:w + window]
        mw = None if m is None else m[:, w:w + window]
        s, var, n = mk_batch(vw, mw)
        z, p, _ = _z_p_tau(s, var, n)
        sig = (n >= MIN_SERIES_LENGTH) & (p < alpha)
        codes[sig & (s > 0), w] = 1
        codes[sig & (s < 0), w] = -1
    return codes


_DIR_NAME = {1: INCREASING, -1: DECREASING}


def tipping_points(series, window: int, alpha: float = DEFAULT_ALPHA,
                   missing: np.ndarray | None = None) -> list[TippingPoint]:
    """Direction flips of a rolling Mann-Kendall scan.

    A tipping point is emitted at the start index of the first window
    whose significant direction differs from the previous significant
    one; runs of the same direction collapse to a single event.
    """
    v = np.asarray(series, float)
    if window < MIN_SERIES_LENGTH:
        raise TooShortError(f"window must be >= {MIN_SERIES_LENGTH}")
    if v.shape[-1] < 2 * window:
        raise TooShortError(f"series of {v.shape[-1]} too short for window {window}")
    codes = _window_directions(v.reshape(1, -1), missing, window, alpha)[0]
    return _walk_codes(codes, window)


def _walk_codes(codes: np.ndarray, window: int) -> list[TippingPoint]:
    out = []
    prev = 0
    for w, c in enumerate(codes):
        if c == 0:
            continue
        if prev != 0 and c != prev:
            out.append(TippingPoint(t_index=w, from_direction=_DIR_NAME[prev],
                                    to_direction=_DIR_NAME[int(c)], window=window))
        prev = int(c)
    return out


def tipping_points_cube(cube: SpaceTimeCube, window: int,
                        alpha: float = DEFAULT_ALPHA) -> dict[int, list[TippingPoint]]:
    """Tipping points per cell; cells without any flip are omitted."""
    if window < MIN_SERIES_LENGTH:
        raise TooShortError(f"window must be >= {MIN_SERIES_LENGTH}")
    if cube.n_slices < 2 * window:
        raise TooShortError(f"cube of {cube.n_slices} slices too short for window {window}")
    codes = _window_directions(cube.values, cube.missing, window, alpha)
    out: dict[int, list[TippingPoint]] = {}
    for cell in range(codes.shape[0]):
        points = _walk_codes(codes[cell], window)
        if points:
            out[cell] = points
    return out
