"""Week-level scoring of detectors against outbreak labels."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError

METHODS = ("hmm", "baseline")
DEFAULT_STRATA = ((2, 2, "2"), (3, 3, "3"), (4, 5, "4-5"), (6, 10, "6-10"),
                  (11, math.inf, "11+"))


@dataclass(frozen=True)
class ScoredWeek:
    series_id: str
    week: int
    label: int
    hmm_score: float
    baseline_score: float
    outbreak_size: int | None = None
    baseline_alarm: bool | None = None
    scenario: str | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise EvaluationError(f"{self.series_id}@{self.week}: label must be 0 or 1")
        for v in (self.hmm_score, self.baseline_score):
            if not 0.0 <= v <= 1.0:
                raise EvaluationError(f"{self.series_id}@{self.week}: score {v} outside [0, 1]")

    def score(self, method: str) -> float:
        return self.hmm_score if method == "hmm" else self.baseline_score


@dataclass(frozen=True)
class Metrics:
    sensitivity: float
    fpr: float
    precision: float | None
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float | None = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("threshold", "sensitivity", "fpr", "precision", "tp", "fp", "fn", "tn")}


def _arrays(scored, method):
    if method not in METHODS:
        raise EvaluationError(f"unknown method {method!r}")
    y = np.fromiter((w.label for w in scored), dtype=np.int8, count=len(scored))
    s = np.fromiter((w.score(method) for w in scored), dtype=np.float64, count=len(scored))
    return y, s


def _sweep(y, s):
    """Distinct thresholds (descending) with cumulative TP/FP at score >= threshold."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted == 1)
    fp = np.cumsum(y_sorted == 0)
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s_sorted.size - 1]
    return s_sorted[last], tp[last], fp[last]


def roc_curve(scored, method: str = "hmm") -> list[tuple[float, float, float]]:
    """``(fpr, sensitivity, threshold)`` points, thresholds descending.

    The first point is ``(0, 0, inf)``; the last is ``(1, 1, min score)``.
    """
    y, s = _arrays(scored, method)
    P, N = int(np.sum(y == 1)), int(np.sum(y == 0))
    if P == 0 or N == 0:
        raise EvaluationError("ROC needs at least one positive and one negative week")
    thr, tp, fp = _sweep(y, s)
    pts = [(0.0, 0.0, math.inf)]
    pts += [(float(f) / N, float(t) / P, float(h)) for h, t, f in zip(thr, tp, fp)]
    return pts


def auc(points) -> float:
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def confusion(y, alarm) -> tuple[int, int, int, int]:
    tp = int(np.sum(alarm & (y == 1)))
    fp = int(np.sum(alarm & (y == 0)))
    fn = int(np.sum(~alarm & (y == 1)))
    tn = int(np.sum(~alarm & (y == 0)))
    return tp, fp, fn, tn


def _metrics(y, alarm, threshold=None) -> Metrics:
    tp, fp, fn, tn = confusion(y, alarm)
    sens = tp / (tp + fn) if tp + fn else float("nan")
    fpr = fp / (fp + tn) if fp + tn else float("nan")
    prec = tp / (tp + fp) if tp + fp else None
    return Metrics(sens, fpr, prec, tp, fp, fn, tn, threshold)


def metrics_at(scored, threshold: float, method: str = "hmm") -> Metrics:
    """Sensitivity, FPR and precision with alarms at ``score >= threshold``.

    Precision is ``None`` when nothing alarms.
    """
    y, s = _arrays(scored, method)
    return _metrics(y, s >= threshold, threshold)


def metrics_from_alarms(scored) -> Metrics:
    """Metrics for the baseline's own alpha-level alarm flags."""
    if any(w.baseline_alarm is None for w in scored):
        raise EvaluationError("baseline alarm flags missing")
    y = np.array([w.label for w in scored], dtype=np.int8)
    alarm = np.array([bool(w.baseline_alarm) for w in scored])
    return _metrics(y, alarm)


def match_sensitivity(scored, reference_sensitivity: float, method: str = "hmm") -> float:
    """Largest threshold whose sensitivity reaches ``reference_sensitivity``."""
    y, s = _arrays(scored, method)
    P = int(np.sum(y == 1))
    if P == 0:
        raise EvaluationError("no positive weeks to match sensitivity on")
    if not 0 < reference_sensitivity <= 1:
        raise EvaluationError(f"reference sensitivity {reference_sensitivity} not attainable")
    thr, tp, _ = _sweep(y, s)
    ok = np.flatnonzero(tp / P >= reference_sensitivity - 1e-12)
    if ok.size == 0:
        raise EvaluationError(f"reference sensitivity {reference_sensitivity} not attainable")
    return float(thr[ok[0]])


def overlap_counts(scored, hmm_threshold: float, baseline_threshold: float | None = None) -> dict:
    """Recall overlap on labeled outbreak weeks.

    ``baseline_threshold=None`` uses the baseline's alpha-level alarm flags.
    """
    pos = [w for w in scored if w.label == 1]
    h = np.array([w.hmm_score >= hmm_threshold for w in pos], dtype=bool)
    if baseline_threshold is None:
        b = np.array([bool(w.baseline_alarm) for w in pos], dtype=bool)
    else:
        b = np.array([w.baseline_score >= baseline_threshold for w in pos], dtype=bool)
    return {
        "both": int(np.sum(h & b)),
        "hmm_only": int(np.sum(h & ~b)),
        "baseline_only": int(np.sum(~h & b)),
        "labeled_missed": int(np.sum(~h & ~b)),
    }


def _summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0}
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {"n": int(v.size), "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4])}


def size_strata(scored, method: str = "hmm", strata=DEFAULT_STRATA) -> dict:
    """Score distributions of endemic weeks and of outbreak weeks by size."""
    out = {"endemic": _summary([w.score(method) for w in scored if w.label == 0])}
    groups = {"<2": []}
    groups.update({name: [] for _, _, name in strata})
    for w in scored:
        if w.label != 1 or w.outbreak_size is None:
            continue
        for lo, hi, name in strata:
            if lo <= w.outbreak_size <= hi:
                groups[name].append(w.score(method))
                break
        else:
            if w.outbreak_size < strata[0][0]:
                groups["<2"].append(w.score(method))
    out.update({name: _summary(v) for name, v in groups.items()})
    return out


def outbreak_recall(scored, alarm_of) -> dict:
    """Episode-level recall: an outbreak run counts as found if any week alarms."""
    by_series = {}
    for w in scored:
        by_series.setdefault(w.series_id, []).append(w)
    found = total = 0
    for weeks in by_series.values():
        weeks.sort(key=lambda w: w.week)
        prev_week, in_run, hit = None, False, False
        for w in weeks:
            contiguous = prev_week is not None and w.week == prev_week + 1
            if w.label == 1 and in_run and contiguous:
                hit = hit or bool(alarm_of(w))
            else:
                if in_run:
                    total += 1
                    found += hit
                in_run = w.label == 1
                hit = in_run and bool(alarm_of(w))
            prev_week = w.week
        if in_run:
            total += 1
            found += hit
    return {"episodes": total, "recalled": found,
            "recall": found / total if total else None}


@dataclass
class EvalReport:
    alpha: float
    n_weeks: int
    n_outbreak_weeks: int
    roc: dict
    auc: dict
    baseline: Metrics
    hmm_matched: Metrics
    overlap: dict
    strata: dict
    episode_recall: dict
    per_scenario: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_weeks": self.n_weeks,
            "n_outbreak_weeks": self.n_outbreak_weeks,
            "auc": self.auc,
            "operating_points": {"baseline": self.baseline.as_dict(),
                                 "hmm": self.hmm_matched.as_dict()},
            "overlap": self.overlap,
            "size_strata": self.strata,
            "episode_recall": self.episode_recall,
            "per_scenario": self.per_scenario,
            "roc": {m: [[f, s, None if math.isinf(t) else t] for f, s, t in pts]
                    for m, pts in self.roc.items()},
        }

    def roc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "threshold", "fpr", "sensitivity"])
        for m, pts in self.roc.items():
            for f, s, t in pts:
                w.writerow([m, "inf" if math.isinf(t) else repr(t), repr(f), repr(s)])
        return buf.getvalue()

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "method", "metric", "value"])

        def emit(scope, method, m: Metrics):
            for k, v in m.as_dict().items():
                w.writerow([scope, method, k, "NA" if v is None else repr(v)])

        emit("pooled", "baseline", self.baseline)
        emit("pooled", "hmm", self.hmm_matched)
        for m, a in self.auc.items():
            w.writerow(["pooled", m, "auc", repr(a)])
        for sc, d in self.per_scenario.items():
            for m in METHODS:
                for k, v in d[m].items():
                    w.writerow([sc, m, k, "NA" if v is None else repr(v)])
        return buf.getvalue()


def _operating(scored):
    base = metrics_from_alarms(scored)
    if not base.sensitivity > 0:
        raise EvaluationError("baseline raised no true alarms; cannot match sensitivity")
    thr = match_sensitivity(scored, base.sensitivity, "hmm")
    return base, metrics_at(scored, thr, "hmm")


def build_report(scored, alpha: float = 0.01) -> EvalReport:
    """Full comparison: HMM threshold matched to the baseline's sensitivity at ``alpha``."""
    scored = list(scored)
    if not scored:
        raise EvaluationError("nothing to evaluate")
    roc = {m: roc_curve(scored, m) for m in METHODS}
    base, hmm = _operating(scored)
    per = {}
    scenarios = sorted({w.scenario for w in scored if w.scenario is not None})
    for sc in scenarios:
        sub = [w for w in scored if w.scenario == sc]
        entry = {}
        try:
            b, h = _operating(sub)
            entry = {"baseline": b.as_dict(), "hmm": h.as_dict()}
            for m in METHODS:
                entry[m]["auc"] = auc(roc_curve(sub, m))
        except EvaluationError:
            continue
        per[sc] = entry
    return EvalReport(
        alpha=alpha,
        n_weeks=len(scored),
        n_outbreak_weeks=sum(w.label for w in scored),
        roc=roc,
        auc={m: auc(p) for m, p in roc.items()},
        baseline=base,
        hmm_matched=hmm,
        overlap=overlap_counts(scored, hmm.threshold),
        strata={m: size_strata(scored, m) for m in METHODS},
        episode_recall={
            "hmm": outbreak_recall(scored, lambda w: w.hmm_score >= hmm.threshold),
            "baseline": outbreak_recall(scored, lambda w: bool(w.baseline_alarm)),
        },
        per_scenario=per,
    )
