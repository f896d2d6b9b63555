"""Sub-route evaluation: MAPE/MAE, paired Z-tests, naive baselines, grids.

A sub-route query fixes a current position ``i`` and destination section
``j`` and compares predicted vs. true cumulative travel time over sections
i+1..j. The grid sweeps i over {5, 10, ...} and j upward in steps of 5,
with the route end clamped to the last section.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .dataprep import DEC_Z_PV, TrainingExample, TripRecord

DEFAULT_I_VALUES = (5, 10, 15, 20, 25, 30)
MIN_Z_TEST_SAMPLES = 30


def mae(predicted, actual) -> float:
    """Mean absolute error in seconds."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise ValueError("need matching, non-empty prediction/actual arrays")
    return float(np.mean(np.abs(predicted - actual)))


def mape(predicted, actual) -> float:
    """Mean absolute percentage error; actual values must be positive."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise ValueError("need matching, non-empty prediction/actual arrays")
    if np.any(actual <= 0):
        raise ValueError("MAPE requires positive actual values")
    return float(np.mean(np.abs(predicted - actual) / actual) * 100.0)


@dataclass
class ZTestResult:
    z: float
    significant: bool | None     # None when there were too few samples
    direction: str | None        # "a" or "b": whose mean error is lower
    n: int
    status: str                  # "ok", "degenerate", "insufficient_samples"


def paired_z_test(errors_a, errors_b, alpha: float = 0.1,
                  min_n: int = MIN_Z_TEST_SAMPLES) -> ZTestResult:
    """Two-sided paired Z-test on per-query error differences a - b.

    Refuses to decide below ``min_n`` samples. A zero-variance nonzero
    difference is reported significant by convention with z = +/-inf.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired test needs two equal-length 1-D samples")
    n = a.size
    if n < min_n:
        return ZTestResult(z=float("nan"), significant=None, direction=None,
                           n=n, status="insufficient_samples")
    d = a - b
    mean_d = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        if mean_d == 0.0:
            return ZTestResult(z=0.0, significant=False, direction=None,
                               n=n, status="ok")
        return ZTestResult(z=math.copysign(math.inf, mean_d), significant=True,
                           direction="a" if mean_d < 0 else "b",
                           n=n, status="degenerate")
    z = mean_d / (sd / math.sqrt(n))
    crit = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    significant = abs(z) > crit
    direction = None
    if significant:
        direction = "a" if mean_d < 0 else "b"
    return ZTestResult(z=z, significant=significant, direction=direction,
                       n=n, status="ok")


# ---------------------------------------------------------------------------
# Naive baselines

def baseline_persistence(ex: TrainingExample) -> np.ndarray:
    """Per-section prediction = closest previous bus's travel time there.

    Sections that fell back to previous-week inputs use those values, which
    is exactly what the stored decoder sequence carries.
    """
    pred = ex.dec[:, DEC_Z_PV].copy()
    if not np.all(np.isfinite(pred)):
        raise ValueError("unresolved previous-bus inputs")
    return pred


@dataclass
class HistMeanModel:
    """Training means per (section, weekday, time-of-day bin), with fallbacks."""

    bin_s: float
    by_bin: dict       # (section, weekday, bin) -> mean travel
    by_weekday: dict   # (section, weekday) -> mean travel
    by_section: dict   # section -> mean travel

    def section_mean(self, section: int, weekday: int, t: float) -> float:
        key = (section, weekday, int(t // self.bin_s))
        if key in self.by_bin:
            return self.by_bin[key]
        wk = (section, weekday)
        if wk in self.by_weekday:
            return self.by_weekday[wk]
        return self.by_section[section]


def fit_hist_mean(train_trips: list[TripRecord], bin_s: float = 1800.0
                  ) -> HistMeanModel:
    if not train_trips:
        raise ValueError("no training trips")
    sums: dict = {}
    counts: dict = {}

    def add(key, v):
        sums[key] = sums.get(key, 0.0) + v
        counts[key] = counts.get(key, 0) + 1

    for trip in train_trips:
        for sec in range(1, trip.n_sections + 1):
            z = trip.travel(sec)
            add((sec, trip.weekday, int(trip.entry(sec) // bin_s)), z)
            add((sec, trip.weekday), z)
            add((sec,), z)
    by_bin = {k: sums[k] / counts[k] for k in sums if len(k) == 3}
    by_weekday = {k: sums[k] / counts[k] for k in sums if len(k) == 2}
    by_section = {k[0]: sums[k] / counts[k] for k in sums if len(k) == 1}
    return HistMeanModel(bin_s=bin_s, by_bin=by_bin, by_weekday=by_weekday,
                         by_section=by_section)


def baseline_hist_mean(model: HistMeanModel, ex: TrainingExample,
                       weekday: int | None = None) -> np.ndarray:
    """Bin-mean predictions, propagating the expected entry time forward."""
    wd = ex.day_index % 7 if weekday is None else weekday
    k = ex.k
    pred = np.empty(k)
    t = ex.t_c
    for idx in range(k):
        section = ex.m + 1 + idx
        pred[idx] = model.section_mean(section, wd, t)
        t += pred[idx]
    return pred


# ---------------------------------------------------------------------------
# Grid evaluation

def grid_j_values(i: int, n_sections: int, step: int = 5) -> list[int]:
    """Destinations i+step, i+2*step, ... with the route end as the last j."""
    js = [j for j in range(i + step, n_sections, step)]
    js.append(n_sections)
    return js


@dataclass
class GridRow:
    i: int
    j: int
    method: str
    n: int
    mae_s: float
    mape_pct: float
    sig_vs_edu: str
    sig_vs_edb: str


@dataclass
class QueryRecord:
    i: int
    j: int
    method: str
    day_index: int
    trip_id: int
    predicted_s: float
    true_s: float


def evaluate_grid(methods: dict, examples: list[TrainingExample],
                  n_sections: int, i_values=DEFAULT_I_VALUES, j_step: int = 5,
                  alpha: float = 0.1) -> tuple[list[GridRow], list[QueryRecord]]:
    """Cumulative-travel-time comparison over the (i, j) grid.

    ``methods`` maps a method name to a callable producing per-section
    travel-time predictions (seconds) for one example. Each report row
    carries paired Z-test outcomes against the "edu" and "edb" methods:
    "better"/"worse"/"ns" (not significant), "n<30", or "-" when the
    comparison does not apply.
    """
    by_i: dict[int, list[TrainingExample]] = {}
    for ex in examples:
        by_i.setdefault(ex.m, []).append(ex)
    rows: list[GridRow] = []
    queries: list[QueryRecord] = []
    for i in i_values:
        exs = by_i.get(i, [])
        preds = {name: [fn(ex) for ex in exs] for name, fn in methods.items()}
        for j in grid_j_values(i, n_sections, j_step):
            span = j - i
            truth = np.array([float(np.sum(ex.targets[:span])) for ex in exs])
            cum = {name: np.array([float(np.sum(p[:span])) for p in preds[name]])
                   for name in methods}
            abs_err = {name: np.abs(cum[name] - truth) for name in methods}
            for name in methods:
                for ex, p, t in zip(exs, cum[name], truth):
                    queries.append(QueryRecord(i=i, j=j, method=name,
                                               day_index=ex.day_index,
                                               trip_id=ex.trip_id,
                                               predicted_s=float(p),
                                               true_s=float(t)))
                if len(exs) == 0:
                    rows.append(GridRow(i=i, j=j, method=name, n=0,
                                        mae_s=float("nan"), mape_pct=float("nan"),
                                        sig_vs_edu="-", sig_vs_edb="-"))
                    continue
                rows.append(GridRow(
                    i=i, j=j, method=name, n=len(exs),
                    mae_s=mae(cum[name], truth),
                    mape_pct=mape(cum[name], truth),
                    sig_vs_edu=_sig_flag(name, "edu", abs_err, alpha),
                    sig_vs_edb=_sig_flag(name, "edb", abs_err, alpha)))
    return rows, queries


def _sig_flag(name: str, ref: str, abs_err: dict, alpha: float) -> str:
    if name == ref or ref not in abs_err:
        return "-"
    res = paired_z_test(abs_err[name], abs_err[ref], alpha=alpha)
    if res.status == "insufficient_samples":
        return "n<30"
    if not res.significant:
        return "ns"
    return "better" if res.direction == "a" else "worse"


REPORT_CSV_HEADER = ["i", "j", "method", "n", "mae_s", "mape_pct",
                     "sig_vs_edu", "sig_vs_edb"]
QUERY_CSV_HEADER = ["i", "j", "method", "day", "trip_id", "predicted_s",
                    "true_s"]


def save_report_csv(rows: list[GridRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        for r in rows:
            w.writerow([r.i, r.j, r.method, r.n, f"{r.mae_s:.6f}",
                        f"{r.mape_pct:.6f}", r.sig_vs_edu, r.sig_vs_edb])


def save_query_log_csv(queries: list[QueryRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(QUERY_CSV_HEADER)
        for q in queries:
            w.writerow([q.i, q.j, q.method, q.day_index, q.trip_id,
                        f"{q.predicted_s:.6f}", f"{q.true_s:.6f}"])
