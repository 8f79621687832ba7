"""Delimited tables and SVG figures for the report path.

Figures are rendered with the Agg backend and written as SVG next to the
CSV tables; output is deterministic (fixed hash salt, no embedded dates).
"""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "popcube"

import matplotlib.pyplot as plt
import numpy as np

from .metrics import RegionalSeries, RegressionResult
from .stcube import EventTimeline, ORDER_LIFTED, ORDER_PLACED
from .trend import TippingPoint


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "NA"
    return f"{v:.9g}" if isinstance(v, float) else str(v)


def _open_csv(path):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return open(p, "w", newline="", encoding="utf-8")


def write_regional_csv(series: RegionalSeries, path) -> Path:
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "mean", "se", "n"])
        for t, ts in enumerate(series.timestamps):
            w.writerow([_iso(ts), _fmt(float(series.mean[t])),
                        _fmt(float(series.standard_error[t])), int(series.n_cells[t])])
    return Path(path)


def write_regression_csv(rows: list[tuple[str, RegressionResult]], path) -> Path:
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(["source", "slope", "intercept", "r2", "adj_r2", "n", "n_excluded"])
        for name, r in rows:
            w.writerow([name, _fmt(r.slope), _fmt(r.intercept), _fmt(r.r_squared),
                        _fmt(r.adj_r_squared), r.n, r.n_excluded])
    return Path(path)


def write_diurnal_csv(stats: dict, path) -> Path:
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(["stamp", "mean", "median", "n"])
        for stamp, st in stats.items():
            w.writerow([stamp.strftime("%H:%M"), _fmt(st.mean), _fmt(st.median), st.n])
    return Path(path)


def write_tipping_csv(points: dict[int, list[TippingPoint]], timestamps, path) -> Path:
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "t_index", "timestamp", "from", "to", "window"])
        for cell in sorted(points):
            for tp in points[cell]:
                w.writerow([cell, tp.t_index, _iso(timestamps[tp.t_index]),
                            tp.from_direction, tp.to_direction, tp.window])
    return Path(path)


def write_category_summary_csv(emerging, path) -> Path:
    combos: dict[tuple[str, str], int] = {}
    for cat, pol in zip(emerging.category, emerging.polarity):
        combos[(str(cat), str(pol))] = combos.get((str(cat), str(pol)), 0) + 1
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(["category", "polarity", "n_cells"])
        for (cat, pol), n in sorted(combos.items()):
            w.writerow([cat, pol, n])
    return Path(path)


def write_exceptions_csv(rows: list[tuple], header: list[str], path) -> Path:
    with _open_csv(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return Path(path)


# -- figures ----------------------------------------------------------------

def _save(fig, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, format="svg", metadata={"Date": None})
    plt.close(fig)
    return p


def _event_markers(ax, timeline: EventTimeline | None, timestamps, values):
    if timeline is None:
        return
    ts = list(timestamps)
    vals = np.asarray(values, float)
    for ev in timeline.events:
        idx = min(range(len(ts)), key=lambda i: abs((ts[i] - ev.instant).total_seconds()))
        y = vals[idx] if np.isfinite(vals[idx]) else 0.0
        if ev.kind == ORDER_PLACED:
            ax.plot([ts[idx]], [y], "o", mfc="none", mec="red", ms=11, mew=2, zorder=5)
        elif ev.kind == ORDER_LIFTED:
            ax.plot([ts[idx]], [y], "o", mfc="none", mec="green", ms=11, mew=2, zorder=5)


def series_svg(series: RegionalSeries, path, ylabel: str, title: str,
               timeline: EventTimeline | None = None) -> Path:
    """Line chart of a regional series with error bars and order markers
    (red circle: order placed, green circle: order lifted)."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ts = series.timestamps
    ax.errorbar(ts, series.mean, yerr=np.where(np.isfinite(series.standard_error),
                                               series.standard_error, 0.0),
                lw=1.5, elinewidth=0.8, capsize=2, color="#1f77b4")
    ax.axhline(0.0, color="0.6", lw=0.8, ls="--")
    _event_markers(ax, timeline, ts, series.mean)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.autofmt_xdate()
    fig.tight_layout()
    return _save(fig, path)


def scatter_fit_svg(x, y, fit: RegressionResult, path, xlabel: str, ylabel: str,
                    title: str) -> Path:
    """Scatter with the fitted line and its equation."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.plot(x[ok], y[ok], ".", ms=3, alpha=0.5, color="#1f77b4")
    if ok.any():
        xs = np.linspace(x[ok].min(), x[ok].max(), 2)
        ax.plot(xs, fit.slope * xs + fit.intercept, "-", color="crimson", lw=1.5,
                label=f"y = {fit.slope:.4f}x + {fit.intercept:.2f}  (R$^2$={fit.r_squared:.4f})")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
