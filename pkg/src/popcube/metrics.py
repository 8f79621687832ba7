"""Scalar metrics over slices: floored z-scores, penetration rates,
representativeness regressions, diurnal grouping, and regional aggregates.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from datetime import datetime, time

import numpy as np

from .errors import (
    DegenerateFitError,
    EmptyInputError,
    EmptyRegionError,
    NoStampError,
    UndefinedRateError,
)
from .ingest import SIGMA_MIN_DEFAULT, SliceSet, record_value, snap_stamp


@dataclass(frozen=True)
class ZScoreParams:
    """Inputs of the floored standardization.

    ``sigma_min`` guards the division when the baseline shows no
    dispersion; the dispersion is a standard deviation, in counts.
    """

    crisis: float
    baseline_mean: float
    baseline_sigma: float
    sigma_min: float = SIGMA_MIN_DEFAULT

    def __post_init__(self):
        if self.baseline_sigma < 0:
            raise ValueError("baseline_sigma must be non-negative")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")


def z_score(p: ZScoreParams) -> float:
    """(crisis - baseline_mean) / max(baseline_sigma, sigma_min).

    Negative values mean the crisis population sits below the pre-crisis
    level; the floor removes the zero-dispersion singularity.
    """
    return (p.crisis - p.baseline_mean) / max(p.baseline_sigma, p.sigma_min)


def z_score_array(crisis, baseline_mean, baseline_sigma,
                  sigma_min: float = SIGMA_MIN_DEFAULT) -> np.ndarray:
    """Vectorized floored z-score."""
    c = np.asarray(crisis, float)
    m = np.asarray(baseline_mean, float)
    s = np.maximum(np.asarray(baseline_sigma, float), sigma_min)
    return (c - m) / s


def penetration_rate(fb_users: float, total_pop: float) -> float:
    """Platform users as a percentage of total population.

    May exceed 100 over noisy, sparse cells; a non-positive reference
    population makes the rate undefined and raises.
    """
    if total_pop <= 0:
        raise UndefinedRateError(f"total population {total_pop} is not positive")
    if fb_users < 0:
        raise ValueError("user count must be non-negative")
    return 100.0 * fb_users / total_pop


def penetration_field(fb_users, total_pop, cap: float | None = None):
    """Per-unit penetration rates with an undefined-mask instead of raising.

    Returns (rates, undefined, over_100). Rates above 100 are kept and
    flagged unless a cap is supplied.
    """
    users = np.asarray(fb_users, float)
    pop = np.asarray(total_pop, float)
    undefined = ~(pop > 0) | np.isnan(users)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(undefined, np.nan, 100.0 * users / pop)
    over = rates > 100.0
    if cap is not None:
        rates = np.where(over, cap, rates)
    return rates, undefined, over & ~undefined


def average_baseline(slices: SliceSet):
    """Per-cell mean baseline over non-missing slices.

    Returns (values, missing); cells absent everywhere are masked.
    """
    if slices.n_slices == 0:
        raise EmptyInputError("cannot average an empty slice set")
    vals, missing = slices.field_arrays("n_baseline")
    count = (~missing).sum(axis=1)
    total = np.where(missing, 0.0, vals).sum(axis=1)
    out_missing = count == 0
    with np.errstate(invalid="ignore"):
        mean = np.where(out_missing, np.nan, total / np.maximum(count, 1))
    return mean, out_missing


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n: int
    adj_r_squared: float | None = None
    n_excluded: int = 0


def _paired_finite(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    return x[ok], y[ok], int((~ok).sum())


def fit_penetration(fbp, pop) -> RegressionResult:
    """Ordinary least squares of mean baseline population on reference
    population (slope read as the average penetration ratio).

    Pairs with a masked member are excluded and counted. Constant x is a
    degenerate fit.
    """
    y, x, excluded = _paired_finite(fbp, pop)
    return _ols(x=x, y=y, excluded=excluded)


def _ols(x: np.ndarray, y: np.ndarray, excluded: int) -> RegressionResult:
    n = len(x)
    if n < 2:
        raise DegenerateFitError(f"need at least 2 pairs, got {n}")
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    if sxx == 0.0:
        raise DegenerateFitError("x values are all identical")
    sxy = ((x - xm) * (y - ym)).sum()
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_res = ((y - (slope * x + intercept)) ** 2).sum()
    ss_tot = ((y - ym) ** 2).sum()
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RegressionResult(slope=float(slope), intercept=float(intercept),
                            r_squared=float(r2), n=n, n_excluded=excluded)


def demographic_correlation(pen_rate, cohort_share) -> RegressionResult:
    """Penetration rate regressed on a cohort share, with adjusted R^2.

    n = 2 leaves the adjustment undefined and is treated as degenerate.
    """
    y, x, excluded = _paired_finite(pen_rate, cohort_share)
    if len(x) <= 2:
        raise DegenerateFitError("adjusted R^2 needs at least 3 pairs")
    res = _ols(x=x, y=y, excluded=excluded)
    res.adj_r_squared = 1.0 - (1.0 - res.r_squared) * (res.n - 1) / (res.n - 2)
    return res


@dataclass
class DiurnalStat:
    mean: float
    median: float
    n: int


def diurnal_average(timestamps: list[datetime], values) -> dict[time, DiurnalStat]:
    """Group a per-timestamp series by canonical time-of-day stamp.

    Non-canonical timestamps are skipped; if nothing snaps, that is an
    error rather than an empty answer.
    """
    values = np.asarray(values, float)
    groups: dict[time, list[float]] = {}
    for ts, v in zip(timestamps, values):
        if not np.isfinite(v):
            continue
        stamp = snap_stamp(ts)
        if stamp is None:
            continue
        groups.setdefault(stamp, []).append(float(v))
    if not groups:
        raise NoStampError("no timestamp snaps to a canonical stamp")
    return {
        stamp: DiurnalStat(mean=statistics.fmean(vs),
                           median=statistics.median(vs), n=len(vs))
        for stamp, vs in sorted(groups.items())
    }


@dataclass
class RegionalSeries:
    """Per-timestamp mean and standard error over a cell mask.

    ``standard_error`` is sample std / sqrt(n) and NaN where fewer than two
    cells contribute; ``mean`` is NaN where nothing contributes at all.
    """

    timestamps: list[datetime]
    mean: np.ndarray
    standard_error: np.ndarray
    n_cells: np.ndarray


def _masked_cells(slices: SliceSet, mask) -> list[int]:
    cells = sorted(set(int(c) for c in mask))
    if not cells:
        raise EmptyRegionError("regional aggregate over an empty mask")
    for c in cells:
        slices.grid._check(c)
    return cells


def regional_mean_z(slices: SliceSet, mask,
                    sigma_min: float = SIGMA_MIN_DEFAULT) -> RegionalSeries:
    """Mean z-score and its standard error over the masked cells, per slice."""
    cells = _masked_cells(slices, mask)
    T = slices.n_slices
    mean = np.full(T, np.nan)
    se = np.full(T, np.nan)
    n = np.zeros(T, dtype=int)
    for t, sl in enumerate(slices.slices):
        zs = []
        for c in cells:
            rec = sl.records.get(c)
            if rec is None:
                continue
            z = record_value(rec, "z_score", sigma_min)
            if z is not None:
                zs.append(z)
        n[t] = len(zs)
        if zs:
            mean[t] = statistics.fmean(zs)
        if len(zs) >= 2:
            se[t] = statistics.stdev(zs) / len(zs) ** 0.5
    return RegionalSeries(timestamps=slices.timestamps, mean=mean,
                          standard_error=se, n_cells=n)


def total_difference(slices: SliceSet, mask) -> RegionalSeries:
    """Summed population difference over the masked cells, per slice.

    The sum (not the mean) is reported: positive and negative departures
    would otherwise cancel. Slices where every masked cell is missing stay
    masked in the output.
    """
    cells = _masked_cells(slices, mask)
    T = slices.n_slices
    total = np.full(T, np.nan)
    n = np.zeros(T, dtype=int)
    for t, sl in enumerate(slices.slices):
        acc = 0.0
        k = 0
        for c in cells:
            rec = sl.records.get(c)
            if rec is not None:
                acc += rec.n_difference
                k += 1
        n[t] = k
        if k:
            total[t] = acc
    return RegionalSeries(timestamps=slices.timestamps, mean=total,
                          standard_error=np.full(T, np.nan), n_cells=n)
