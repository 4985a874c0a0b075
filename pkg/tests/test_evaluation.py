import json
import math

import numpy as np
import pytest

from outbreak_hmm.errors import EvaluationError
from outbreak_hmm.evaluation import (ScoredWeek, auc, build_report, confusion, match_sensitivity,
                                     metrics_at, metrics_from_alarms, outbreak_recall,
                                     overlap_counts, roc_curve, size_strata)

from oracles import hand_confusion, trapezoid_auc_pairs


def weeks(labels, hmm, base=None, alarms=None, sizes=None, sid="s"):
    base = hmm if base is None else base
    out = []
    for i, (y, h, b) in enumerate(zip(labels, hmm, base)):
        out.append(ScoredWeek(sid, i + 1, y, h, b,
                              None if sizes is None else sizes[i],
                              None if alarms is None else alarms[i]))
    return out


def test_perfect_separation():
    sw = weeks([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
    assert auc(roc_curve(sw)) == 1.0


def test_constant_scores():
    sw = weeks([0, 1, 0, 1, 0], [0.3] * 5)
    pts = roc_curve(sw)
    assert [(f, s) for f, s, _ in pts] == [(0.0, 0.0), (1.0, 1.0)]
    assert auc(pts) == 0.5


def test_six_week_toy_by_hand():
    labels = [1, 0, 1, 0, 0, 1]
    scores = [0.9, 0.6, 0.4, 0.2, 0.5, 0.7]
    sw = weeks(labels, scores)
    m = metrics_at(sw, 0.5)
    # alarms at 0.9, 0.6, 0.5, 0.7 -> TP 2 (0.9, 0.7), FP 2 (0.6, 0.5)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 2, 1, 1)
    assert m.sensitivity == pytest.approx(2 / 3) and m.fpr == pytest.approx(2 / 3)
    pts = roc_curve(sw)
    assert (2 / 3, 2 / 3, 0.5) in pts
    assert pts[0] == (0.0, 0.0, math.inf) and pts[-1][:2] == (1.0, 1.0)


def test_roc_monotone_and_auc_matches_mann_whitney():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(5, 200))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(rng.random(n) + 0.3 * y, int(rng.integers(1, 4)))
        s = np.clip(s, 0, 1)
        sw = weeks(y, s)
        pts = roc_curve(sw)
        f = [p[0] for p in pts]
        se = [p[1] for p in pts]
        th = [p[2] for p in pts]
        assert np.all(np.diff(f) >= 0) and np.all(np.diff(se) >= 0) and np.all(np.diff(th) < 0)
        assert auc(pts) == pytest.approx(trapezoid_auc_pairs(s[y == 1], s[y == 0]), abs=1e-12)
        for thr in np.unique(s):
            tp, fp, fn, tn = hand_confusion(y, s, thr)
            m = metrics_at(sw, thr)
            assert (m.tp, m.fp, m.fn, m.tn) == (tp, fp, fn, tn)
            assert tp + fp + fn + tn == n


def test_single_class_rejected():
    with pytest.raises(EvaluationError):
        roc_curve(weeks([0, 0], [0.1, 0.2]))


def test_arithmetic_example():
    y = np.array([1] * 12 + [0] * 88)
    alarm = np.zeros(100, dtype=bool)
    alarm[:3] = True
    alarm[12] = True
    sw = weeks(y, alarm.astype(float))
    m = metrics_at(sw, 0.5)
    assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 9, 87)
    assert m.sensitivity == 0.25 and m.fpr == pytest.approx(1 / 88) and m.precision == 0.75
    none = metrics_at(sw, 2.0)
    assert none.sensitivity == 0 and none.fpr == 0 and none.precision is None


def test_match_sensitivity_tie_break():
    # thresholds 0.7 and 0.6 both give sensitivity 2/3; 0.7 has lower FPR
    sw = weeks([1, 1, 0, 0, 1, 0], [0.9, 0.7, 0.8, 0.6, 0.2, 0.1])
    thr = match_sensitivity(sw, 2 / 3)
    assert thr == 0.7
    exhaustive = [t for t in sorted({w.hmm_score for w in sw}, reverse=True)
                  if metrics_at(sw, t).sensitivity >= 2 / 3]
    best = min(exhaustive, key=lambda t: (metrics_at(sw, t).fpr, -t))
    assert thr == best
    assert match_sensitivity(sw, 1.0) <= min(w.hmm_score for w in sw if w.label)
    with pytest.raises(EvaluationError):
        match_sensitivity(sw, 0.0)


def test_matched_threshold_reaches_reference():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 300)
    s = np.clip(rng.random(300) * 0.7 + 0.3 * y, 0, 1)
    sw = weeks(y, s)
    for ref in (0.1, 0.27, 0.5, 0.93):
        thr = match_sensitivity(sw, ref)
        assert metrics_at(sw, thr).sensitivity >= ref
        above = [t for t in np.unique(s) if t > thr]
        if above:
            assert metrics_at(sw, min(above)).sensitivity < ref


def test_overlap_counts():
    labels = [1, 1, 1, 0]
    same = weeks(labels, [0.9, 0.2, 0.7, 0.8])
    o = overlap_counts(same, 0.5, 0.5)
    assert o["hmm_only"] == o["baseline_only"] == 0
    assert o == {"both": 2, "hmm_only": 0, "baseline_only": 0, "labeled_missed": 1}
    disjoint = weeks(labels, [0.9, 0.1, 0.1, 0.0], [0.1, 0.9, 0.1, 0.0])
    o = overlap_counts(disjoint, 0.5, 0.5)
    assert o["both"] == 0 and sum(o.values()) == 3
    flagged = weeks(labels, [0.9, 0.1, 0.1, 0.0], alarms=[True, True, False, True])
    assert overlap_counts(flagged, 0.5) == {"both": 1, "hmm_only": 0, "baseline_only": 1,
                                            "labeled_missed": 1}


def test_size_strata():
    labels = [0, 1, 1, 1, 1, 1, 1, 1]
    sizes = [None, 1, 2, 3, 5, 7, 40, None]
    sw = weeks(labels, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.5], sizes=sizes)
    st = size_strata(sw)
    assert st["endemic"]["median"] == 0.1
    assert st["<2"]["n"] == 1 and st["2"]["median"] == 0.3 and st["4-5"]["median"] == 0.5
    assert st["11+"]["median"] == 0.9 and st["6-10"]["n"] == 1


def test_episode_recall():
    labels = [0, 1, 1, 0, 1, 0, 1, 1]
    hmm = [0, 0, 1, 0, 0, 0, 1, 0]
    sw = weeks(labels, hmm)
    r = outbreak_recall(sw, lambda w: w.hmm_score >= 0.5)
    assert r == {"episodes": 3, "recalled": 2, "recall": 2 / 3}


def test_confusion_helper():
    assert confusion(np.array([1, 0, 1]), np.array([True, True, False])) == (1, 1, 1, 0)


def test_score_validation():
    with pytest.raises(EvaluationError):
        ScoredWeek("s", 1, 2, 0.5, 0.5)
    with pytest.raises(EvaluationError):
        ScoredWeek("s", 1, 0, 1.5, 0.5)
    with pytest.raises(EvaluationError):
        metrics_from_alarms(weeks([1, 0], [0.5, 0.5]))


def test_report_structure():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 400)
    h = np.clip(rng.random(400) * 0.6 + 0.4 * y, 0, 1)
    b = np.clip(rng.random(400) * 0.8 + 0.2 * y, 0, 1)
    sw = [ScoredWeek(f"s{i % 4}", i // 4 + 1, int(y[i]), h[i], b[i], int(rng.integers(0, 20)),
                     bool(b[i] > 0.9), f"sc{i % 2}") for i in range(400)]
    rep = build_report(sw)
    assert rep.hmm_matched.sensitivity >= rep.baseline.sensitivity
    assert set(rep.per_scenario) == {"sc0", "sc1"}
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["n_weeks"] == 400 and doc["roc"]["hmm"][0][2] is None
    assert rep.roc_csv().startswith("method,threshold,fpr,sensitivity\n")
    assert "pooled,hmm,auc," in rep.metrics_csv()
    with pytest.raises(EvaluationError):
        build_report([])
