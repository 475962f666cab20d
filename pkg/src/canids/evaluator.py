"""Pointwise and interval-level evaluation of anomaly reports.

Pointwise ground truth is the per-message attack label, with one documented
exception: inside a suppress interval no attacked messages exist (they were
removed), so every scored step whose time falls in such an interval counts
as attack-positive regardless of its own label.

The interval criterion asks, for each attack interval and each level P in a
5..95 percent grid, whether at least P percent of the interval's scored
steps carry global score 1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .attack_injector import SUITE_SUBSETS
from .data_model import Trace
from .errors import DataError
from .scorer import AnomalyReport

log = logging.getLogger(__name__)

#: grid of interval-detection levels, in percent (includes P=10)
P_GRID = tuple(range(5, 100, 5))


@dataclass(frozen=True)
class PointwiseMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def tpr(self) -> float | None:
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def tnr(self) -> float | None:
        neg = self.tn + self.fp
        return self.tn / neg if neg else None


@dataclass(frozen=True)
class IntervalCurve:
    p_grid: tuple[int, ...]
    ratios: tuple[float, ...]
    interval_fractions: tuple[float, ...]  # flagged-step fraction per interval

    @property
    def n_intervals(self) -> int:
        return len(self.interval_fractions)

    def ratio_at(self, p: int) -> float:
        return self.ratios[self.p_grid.index(p)]


def _check_alignment(report: AnomalyReport, trace: Trace) -> None:
    scored = len(trace) - report.warm_up
    if scored != len(report):
        raise DataError(
            f"report has {len(report)} rows but trace has {scored} post-warm-up messages"
        )
    if scored and not np.array_equal(report.times_us, trace.times_us[report.warm_up :]):
        raise DataError("report rows do not align with the trace messages")


def _truth(report: AnomalyReport, trace: Trace) -> np.ndarray:
    truth = trace.labels[report.warm_up :].copy()
    for a in trace.attacks:
        if a.kind == "suppress":
            inside = (report.times_us >= a.start_us) & (report.times_us < a.end_us)
            truth |= inside
    return truth


def pointwise(report: AnomalyReport, trace: Trace) -> PointwiseMetrics:
    """Confusion counts and rates over all scored steps."""
    _check_alignment(report, trace)
    truth = _truth(report, trace)
    pred = report.global_score.astype(bool)
    tp = int((truth & pred).sum())
    fp = int((~truth & pred).sum())
    tn = int((~truth & ~pred).sum())
    fn = int((truth & ~pred).sum())
    return PointwiseMetrics(tp, fp, tn, fn)


def interval_curve(report: AnomalyReport, trace: Trace, p_grid: tuple[int, ...] = P_GRID) -> IntervalCurve:
    """Fraction of attack intervals detected at each level of the P grid."""
    _check_alignment(report, trace)
    if not trace.attacks:
        raise DataError("trace has no attack intervals")
    pred = report.global_score.astype(bool)
    fracs = []
    for a in trace.attacks:
        lo = int(np.searchsorted(report.times_us, a.start_us, side="left"))
        hi = int(np.searchsorted(report.times_us, a.end_us, side="left"))
        if hi <= lo:
            fracs.append(0.0)
            continue
        fracs.append(float(pred[lo:hi].mean()))
    fr = np.array(fracs)
    ratios = tuple(float((fr >= p / 100.0).mean()) for p in p_grid)
    return IntervalCurve(tuple(p_grid), ratios, tuple(fracs))


# ---------------------------------------------------------------------------
# suite-level reporting


@dataclass
class SuiteSummary:
    model: str
    metrics: dict[str, PointwiseMetrics]
    curves: dict[str, IntervalCurve]


def summarize_suite(model: str, subset_results: dict[str, tuple[AnomalyReport, Trace]]) -> SuiteSummary:
    """Metrics for every present subset; missing subsets get a warning."""
    metrics: dict[str, PointwiseMetrics] = {}
    curves: dict[str, IntervalCurve] = {}
    for name in SUITE_SUBSETS:
        if name not in subset_results:
            log.warning("subset %r missing; emitting a partial summary", name)
            continue
        report, trace = subset_results[name]
        metrics[name] = pointwise(report, trace)
        if name != "normal":
            curves[name] = interval_curve(report, trace)
    return SuiteSummary(model, metrics, curves)


def report_suite(model: str, subset_results: dict[str, tuple[AnomalyReport, Trace]], out_dir) -> SuiteSummary:
    """Summarize one model's six subsets and export table, metrics CSV,
    interval curves, and per-interval detail files."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_suite(model, subset_results)
    (out / f"{model}_table.txt").write_text(format_table([summary]), encoding="utf-8")
    write_suite_csv([summary], out / f"{model}_metrics.csv")
    write_curves_csv([summary], out / f"{model}_curves.csv")
    for name, curve in summary.curves.items():
        write_intervals_csv(model, name, subset_results[name][1], curve, out / f"{model}_intervals_{name}.csv")
    return summary


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


def format_table(summaries: list[SuiteSummary]) -> str:
    """Aligned text table: accuracy for the normal subset, TPR/TNR for attacks."""
    headers = ["model", "no_attack"] + [k for k in SUITE_SUBSETS if k != "normal"]
    rows = []
    for s in summaries:
        row = [s.model]
        m = s.metrics.get("normal")
        row.append(_fmt(m.accuracy) if m else "-")
        for kind in SUITE_SUBSETS[1:]:
            m = s.metrics.get(kind)
            row.append(f"{_fmt(m.tpr)} / {_fmt(m.tnr)}" if m else "-")
        rows.append(row)
    widths = [max(len(h), *(len(r[k]) for r in rows)) if rows else len(h) for k, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_suite_csv(summaries: list[SuiteSummary], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subset", "accuracy", "tpr", "tnr", "tp", "fp", "tn", "fn"])
        for s in summaries:
            for name in SUITE_SUBSETS:
                m = s.metrics.get(name)
                if m is None:
                    continue
                w.writerow(
                    [
                        s.model,
                        name,
                        f"{m.accuracy:.6f}",
                        "" if m.tpr is None else f"{m.tpr:.6f}",
                        "" if m.tnr is None else f"{m.tnr:.6f}",
                        m.tp, m.fp, m.tn, m.fn,
                    ]
                )


def read_suite_csv(path) -> list[SuiteSummary]:
    by_model: dict[str, SuiteSummary] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            s = by_model.setdefault(row["model"], SuiteSummary(row["model"], {}, {}))
            s.metrics[row["subset"]] = PointwiseMetrics(
                int(row["tp"]), int(row["fp"]), int(row["tn"]), int(row["fn"])
            )
    return list(by_model.values())


def write_curves_csv(summaries: list[SuiteSummary], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subset", "p_percent", "detected_ratio"])
        for s in summaries:
            for name, curve in s.curves.items():
                for p, r in zip(curve.p_grid, curve.ratios):
                    w.writerow([s.model, name, p, f"{r:.6f}"])


def write_intervals_csv(model: str, subset: str, trace: Trace, curve: IntervalCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subset", "kind", "start_us", "end_us", "flagged_fraction"])
        for a, frac in zip(trace.attacks, curve.interval_fractions):
            w.writerow([model, subset, a.kind, a.start_us, a.end_us, f"{frac:.6f}"])
