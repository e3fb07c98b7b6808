"""Daily aggregation of detections: counts, speed and heading statistics, anomalies.

Dates are UTC calendar days; all scenes falling on one day are pooled.
Headings are averaged on the circle (direction of the summed unit
vectors) and speeds arithmetically, both over movers with a resolved
heading.
"""
from __future__ import annotations

import csv
import io as _io
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError
from .geometry import wrap_angle
from .vectorize import CLASSES, RESOLVED

log = logging.getLogger(__name__)

UNDEFINED_R = 1e-9


@dataclass(frozen=True)
class HistogramSpec:
    speed_edges: tuple = tuple(np.linspace(0.0, 160.0, 17))
    heading_edges: tuple = tuple(np.linspace(0.0, 360.0, 25))

    def __post_init__(self):
        for name in ("speed_edges", "heading_edges"):
            e = np.asarray(getattr(self, name), dtype=float)
            if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ConfigError(f"{name} must be strictly increasing with at least 2 edges")
            object.__setattr__(self, name, tuple(float(v) for v in e))


def histogram(values, edges):
    """Counts per bin; values outside the edges land in the first or last bin."""
    edges = np.asarray(edges, dtype=float)
    counts = np.zeros(len(edges) - 1, dtype=int)
    if len(values) == 0:
        return counts
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="right") - 1
    np.add.at(counts, np.clip(idx, 0, len(counts) - 1), 1)
    return counts


def circular_mean(headings_deg):
    """``(mean_deg, resultant_length)``; ``mean_deg`` is ``None`` when R < 1e-9."""
    h = np.radians(np.asarray(headings_deg, dtype=float))
    if h.size == 0:
        raise DataError("circular mean of an empty set", field="headings")
    # compass frame: x = sin, y = cos
    s, c = np.sin(h).mean(), np.cos(h).mean()
    r = float(math.hypot(s, c))
    if r < UNDEFINED_R:
        return None, r
    return float(wrap_angle(math.degrees(math.atan2(s, c)))), min(r, 1.0)


@dataclass
class SeriesRow:
    date: str  # YYYY-MM-DD
    n_scenes: int
    counts: dict  # class -> int
    mean_speed_kmh: float | None
    mean_heading_deg: float | None
    heading_resultant: float | None
    speed_hist: np.ndarray
    heading_hist: np.ndarray
    anomaly: bool = False

    @property
    def total(self):
        return sum(self.counts.values())


@dataclass
class SeriesTable:
    rows: list = field(default_factory=list)
    spec: HistogramSpec = field(default_factory=HistogramSpec)

    CSV_HEADER = ("date", "n_scenes", *CLASSES, "total", "mean_speed_kmh",
                  "mean_heading_deg", "heading_resultant", "anomaly")

    def __len__(self):
        return len(self.rows)

    def dates(self):
        return [r.date for r in self.rows]

    def totals(self):
        return [r.total for r in self.rows]

    def to_csv(self):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)

        def num(v, nd):
            return "" if v is None else f"{v:.{nd}f}"

        for r in self.rows:
            w.writerow([r.date, r.n_scenes, *[r.counts.get(c, 0) for c in CLASSES], r.total,
                        num(r.mean_speed_kmh, 3), num(r.mean_heading_deg, 3),
                        num(r.heading_resultant, 6), int(r.anomaly)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "speed_edges": list(self.spec.speed_edges),
            "heading_edges": list(self.spec.heading_edges),
            "rows": [
                {
                    "date": r.date,
                    "n_scenes": r.n_scenes,
                    "counts": {c: r.counts.get(c, 0) for c in CLASSES},
                    "total": r.total,
                    "mean_speed_kmh": r.mean_speed_kmh,
                    "mean_heading_deg": r.mean_heading_deg,
                    "heading_resultant": r.heading_resultant,
                    "speed_hist": [int(v) for v in r.speed_hist],
                    "heading_hist": [int(v) for v in r.heading_hist],
                    "anomaly": r.anomaly,
                }
                for r in self.rows
            ],
        }


def utc_date(timestamp) -> str:
    if not isinstance(timestamp, str) or not timestamp:
        raise ValueError("missing timestamp")
    ts = datetime.fromisoformat(timestamp.replace("Z", "+00:00"))
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc)
    return ts.date().isoformat()


def aggregate(detections, spec: HistogramSpec | None = None, scenes=()) -> SeriesTable:
    """Fold detections into one row per UTC date.

    ``scenes`` optionally lists ``(scene_id, timestamp)`` pairs so scenes
    without any detection still count toward ``n_scenes``.  Detections with
    a missing or unparseable timestamp are rejected with one diagnostic line
    per record.  The speed histogram counts every mover; the heading
    histogram and both means use movers with a resolved heading.
    """
    spec = spec or HistogramSpec()
    detections = list(detections)
    problems = []
    dated = []
    for i, d in enumerate(detections):
        try:
            dated.append((utc_date(d.timestamp), d))
        except (ValueError, TypeError) as exc:
            problems.append(f"detection #{i} (id={getattr(d, 'id', '?')}, scene={getattr(d, 'scene_id', '?')}): "
                            f"bad timestamp {getattr(d, 'timestamp', None)!r}: {exc}")
    if problems:
        raise DataError("detections without usable timestamps:\n  " + "\n  ".join(problems), field="timestamp")

    scene_sets = {}
    for sid, ts in scenes:
        try:
            scene_sets.setdefault(utc_date(ts), set()).add(sid)
        except (ValueError, TypeError) as exc:
            raise DataError(f"scene {sid!r} has bad timestamp {ts!r}: {exc}", field="timestamp") from exc
    groups = {}
    for date, d in dated:
        groups.setdefault(date, []).append(d)
        scene_sets.setdefault(date, set()).add(d.scene_id)

    rows = []
    for date in sorted(scene_sets):
        dets = groups.get(date, [])
        counts = {c: 0 for c in CLASSES}
        for d in dets:
            counts[d.cls] = counts.get(d.cls, 0) + 1
        movers = [d for d in dets if d.velocity is not None]
        resolved = [d for d in movers if d.velocity.heading_confidence == RESOLVED]
        speeds = [d.velocity.speed.speed_kmh for d in resolved]
        heads = [d.velocity.heading_deg for d in resolved]
        mean_speed = float(np.mean(speeds)) if speeds else None
        mh, rl = circular_mean(heads) if heads else (None, None)
        rows.append(SeriesRow(
            date=date,
            n_scenes=len(scene_sets[date]),
            counts=counts,
            mean_speed_kmh=mean_speed,
            mean_heading_deg=mh,
            heading_resultant=rl,
            speed_hist=histogram([d.velocity.speed.speed_kmh for d in movers], spec.speed_edges),
            heading_hist=histogram(heads, spec.heading_edges),
        ))
    return SeriesTable(rows, spec)


def volume_anomaly(table: SeriesTable, window=7, z_thresh=3.0):
    """Flag rows whose total deviates from the trailing mean by ``>= z_thresh`` std.

    The trailing window is the ``window`` preceding rows present in the
    table, so dates without scenes drop out instead of counting as zero.
    Population standard deviation is used; when it is zero any nonzero
    deviation is flagged.  Sets ``row.anomaly`` and returns the flags.
    """
    if window < 3:
        raise ConfigError(f"window must be >= 3, got {window}")
    if z_thresh <= 0:
        raise ConfigError("z_thresh must be positive")
    totals = np.asarray(table.totals(), dtype=float)
    flags = [False] * len(totals)
    if len(totals) < window:
        log.warning("only %d rows for a %d-row window; no anomalies flagged", len(totals), window)
    for i in range(window, len(totals)):
        past = totals[i - window:i]
        dev = abs(totals[i] - past.mean())
        sd = past.std()
        flags[i] = bool(dev > 0) if sd == 0 else bool(dev >= z_thresh * sd)
    for row, f in zip(table.rows, flags):
        row.anomaly = f
    return flags


def write_plots(table: SeriesTable, out_dir):
    """Counts, mean speed and mean heading over time plus pooled histograms, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    from .io import atomic_write_bytes

    matplotlib.rcParams["svg.hashsalt"] = "rainbow-vectors"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = table.dates()
    x = np.arange(len(dates))
    written = []

    def save(fig, name):
        buf = _io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        atomic_write_bytes(out / name, buf.getvalue())
        written.append(out / name)

    def time_axis(ax):
        step = max(1, len(dates) // 10)
        ax.set_xticks(x[::step])
        ax.set_xticklabels(dates[::step], rotation=45, ha="right", fontsize=7)
        ax.set_xlabel("Date")

    fig, ax = plt.subplots(figsize=(8, 4))
    for c in CLASSES:
        ax.plot(x, [r.counts.get(c, 0) for r in table.rows], marker=".", label=c)
    flagged = [i for i, r in enumerate(table.rows) if r.anomaly]
    if flagged:
        ax.plot(flagged, [table.rows[i].total for i in flagged], "rx", label="anomaly")
    ax.set_ylabel("Detections")
    ax.set_title("Vehicle detections over time")
    ax.legend(fontsize=7)
    time_axis(ax)
    fig.tight_layout()
    save(fig, "counts.svg")

    for attr, ylabel, title, name in (
        ("mean_speed_kmh", "Speed (km/h)", "Mean speed over time", "mean_speed.svg"),
        ("mean_heading_deg", "Heading (degrees)", "Mean heading over time", "mean_heading.svg"),
    ):
        fig, ax = plt.subplots(figsize=(8, 4))
        vals = [np.nan if getattr(r, attr) is None else getattr(r, attr) for r in table.rows]
        ax.plot(x, vals, marker=".")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        time_axis(ax)
        fig.tight_layout()
        save(fig, name)

    for attr, edges, xlabel, title, name in (
        ("speed_hist", table.spec.speed_edges, "Vehicle speed (km/h)", "Histogram of vehicle speed", "speed_hist.svg"),
        ("heading_hist", table.spec.heading_edges, "Vehicle heading (degrees)", "Histogram of vehicle heading",
         "heading_hist.svg"),
    ):
        counts = np.sum([getattr(r, attr) for r in table.rows], axis=0) if table.rows else np.zeros(len(edges) - 1)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.stairs(counts, edges, fill=True)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Count")
        ax.set_title(title)
        fig.tight_layout()
        save(fig, name)
    return written
