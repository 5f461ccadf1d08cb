"""Trajectory error metrics: ATE, RTE, AVE and RVE.

All four are root-mean-square errors. Relative metrics compare changes over
non-overlapping intervals anchored at the first matched timestamp; when the
interval is at least the track duration a single start-to-end interval is
used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import AlignmentFailure
from .io import Track

METRIC_NAMES = ("ate", "rte", "ave", "rve")


def align(est: Track, gt: Track, min_fraction: float = 0.5):
    """Nearest-neighbour match of each estimate to ground truth within half a sample.

    Returns index arrays ``(i_est, i_gt)`` of matched pairs.
    """
    if len(gt) == 0 or len(est) == 0:
        raise AlignmentFailure("empty track")
    tol = 0.5 * float(np.median(np.diff(gt.t))) if len(gt) > 1 else np.inf
    pos = np.clip(np.searchsorted(gt.t, est.t), 1, max(len(gt) - 1, 1))
    left = pos - 1 if len(gt) > 1 else np.zeros_like(pos)
    right = np.minimum(pos, len(gt) - 1)
    pick = np.where(np.abs(gt.t[left] - est.t) <= np.abs(gt.t[right] - est.t), left, right)
    ok = np.abs(gt.t[pick] - est.t) <= tol * (1 + 1e-9)
    if ok.sum() < min_fraction * len(est):
        raise AlignmentFailure(f"only {int(ok.sum())} of {len(est)} estimates matched ground truth")
    return np.flatnonzero(ok), pick[ok]


def interval_endpoints(t: np.ndarray, interval: float) -> list[tuple[int, int]]:
    """Index pairs of non-overlapping intervals of length ``interval`` starting at ``t[0]``."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    t0, t_end = t[0], t[-1]
    if interval >= t_end - t0:
        return [(0, len(t) - 1)] if len(t) > 1 else []
    n_int = int(math.floor((t_end - t0) / interval + 1e-9))
    marks = t0 + interval * np.arange(n_int + 1)
    idx = np.clip(np.searchsorted(t, marks), 0, len(t) - 1)
    prev = np.maximum(idx - 1, 0)
    idx = np.where(np.abs(t[prev] - marks) < np.abs(t[idx] - marks), prev, idx)
    return [(int(a), int(b)) for a, b in zip(idx[:-1], idx[1:]) if b > a]


@dataclass
class ErrorSums:
    """Sums of squared errors and counts, pooled with exact summation."""

    sq: dict = field(default_factory=lambda: {m: [] for m in METRIC_NAMES})
    count: dict = field(default_factory=lambda: {m: 0 for m in METRIC_NAMES})

    def add(self, name, sq_errors):
        self.sq[name].extend(float(x) for x in np.ravel(sq_errors))
        self.count[name] += int(np.size(sq_errors))

    def rmse(self, name) -> float:
        n = self.count[name]
        return math.sqrt(math.fsum(self.sq[name]) / n) if n else float("nan")


@dataclass
class MetricsReport:
    ate: float
    rte: float
    ave: float
    rve: float
    interval: float
    n_matched: int = 0
    n_intervals: int = 0
    name: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "ate": self.ate, "rte": self.rte, "ave": self.ave, "rve": self.rve,
                "interval": self.interval, "n_matched": self.n_matched, "n_intervals": self.n_intervals}


def _errors(est: Track, gt: Track, interval: float, rve_mode: str) -> tuple[ErrorSums, int, int]:
    ie, ig = align(est, gt)
    pe, pg = est.p[ie], gt.p[ig]
    ve, vg = est.v[ie], gt.v[ig]
    sums = ErrorSums()
    sums.add("ate", np.sum((pe - pg) ** 2, axis=1))
    sums.add("ave", np.sum((ve - vg) ** 2, axis=1))
    pairs = interval_endpoints(est.t[ie], interval)
    for a, b in pairs:
        d = (pe[b] - pe[a]) - (pg[b] - pg[a])
        sums.add("rte", [d @ d])
        if rve_mode == "delta":
            dv = (ve[b] - ve[a]) - (vg[b] - vg[a])
        elif rve_mode == "mean":
            dv = ve[a:b + 1].mean(axis=0) - vg[a:b + 1].mean(axis=0)
        else:
            raise ValueError(f"unknown rve_mode {rve_mode!r}")
        sums.add("rve", [dv @ dv])
    return sums, len(ie), len(pairs)


def compute_metrics(est: Track, gt: Track, interval: float = 5.0, rve_mode: str = "delta",
                    name: str = "") -> MetricsReport:
    """RMSE metrics of ``est`` against ``gt``.

    ``rve_mode="delta"`` compares velocity changes over each interval;
    ``"mean"`` compares interval-mean velocities instead.

    Raises
    ------
    AlignmentFailure
        If fewer than half of the estimates have a ground-truth match.
    """
    sums, n_matched, n_int = _errors(est, gt, interval, rve_mode)
    return MetricsReport(*(sums.rmse(m) for m in METRIC_NAMES), interval, n_matched, n_int, name)


def aggregate_metrics(pairs, interval: float = 5.0, rve_mode: str = "delta"):
    """Per-sequence reports plus a pooled report over all ``(est, gt)`` pairs.

    Pooling concatenates squared errors across sequences before the RMSE and
    sums them exactly, so the aggregate does not depend on sequence order.
    """
    reports, pooled = [], ErrorSums()
    total_matched = total_int = 0
    for i, (est, gt) in enumerate(pairs):
        sums, n_matched, n_int = _errors(est, gt, interval, rve_mode)
        reports.append(MetricsReport(*(sums.rmse(m) for m in METRIC_NAMES), interval, n_matched, n_int, str(i)))
        for m in METRIC_NAMES:
            pooled.sq[m].extend(sums.sq[m])
            pooled.count[m] += sums.count[m]
        total_matched += n_matched
        total_int += n_int
    total = MetricsReport(*(pooled.rmse(m) for m in METRIC_NAMES), interval, total_matched, total_int, "all")
    return reports, total


def format_table(reports) -> str:
    """Fixed-width text table, one row per report."""
    head = f"{'name':<10}{'ATE[m]':>12}{'RTE[m]':>12}{'AVE[m/s]':>12}{'RVE[m/s]':>12}{'interval[s]':>13}"
    rows = [head]
    for r in reports:
        rows.append(f"{r.name:<10}{r.ate:>12.6f}{r.rte:>12.6f}{r.ave:>12.6f}{r.rve:>12.6f}{r.interval:>13.3f}")
    return "\n".join(rows)


def format_csv(reports) -> str:
    lines = ["name,ate,rte,ave,rve,interval,n_matched,n_intervals"]
    for r in reports:
        lines.append(",".join([r.name] + [format(x, ".17g") for x in (r.ate, r.rte, r.ave, r.rve, r.interval)]
                              + [str(r.n_matched), str(r.n_intervals)]))
    return "\n".join(lines) + "\n"
