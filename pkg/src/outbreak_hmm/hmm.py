"""Supervised two-state HMM: counting MLE for the chain, pooled NB GLM for
emissions, and the filtered outbreak probability at the current week."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import NumericalError, TrainingError
from .nbglm import GlmFit, PooledDesign, irls_fit
from .series import (ENDEMIC, OUTBREAK, PERIOD, UNKNOWN, SeriesGroup,
                     SurveillanceSeries, covariate_matrix, train_test_split)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG_FLOOR = -700.0


class Transitions(NamedTuple):
    pi: np.ndarray
    trans: np.ndarray
    defaulted_rows: tuple


def estimate_transitions(labels, pseudocount: float = 0.0) -> Transitions:
    """Closed-form MLE of the initial distribution and transition matrix.

    ``labels`` is an iterable of label sequences (0, 1, or -1 for unknown).
    Week pairs touching an unknown label are skipped; a series whose first
    label is unknown does not enter the initial-state count.
    """
    if pseudocount < 0:
        raise ValueError("pseudocount must be >= 0")
    counts = np.zeros((2, 2))
    first = np.zeros(2)
    n_seq = 0
    for seq in labels:
        seq = np.asarray(seq, dtype=np.int64)
        n_seq += 1
        if seq.size == 0:
            continue
        if seq[0] != UNKNOWN:
            first[seq[0]] += 1
        prev, nxt = seq[:-1], seq[1:]
        ok = (prev != UNKNOWN) & (nxt != UNKNOWN)
        np.add.at(counts, (prev[ok], nxt[ok]), 1)
    if n_seq == 0:
        raise ValueError("need at least one label sequence")

    trans = np.empty((2, 2))
    defaulted = []
    for i in range(2):
        denom = counts[i].sum() + 2 * pseudocount
        if denom == 0:
            log.warning("state %d never departed in training labels; row set to uniform", i)
            trans[i] = 0.5
            defaulted.append(i)
        else:
            trans[i] = (counts[i] + pseudocount) / denom
    denom = first.sum() + 2 * pseudocount
    if denom == 0:
        log.warning("no known initial labels; initial distribution set to uniform")
        pi = np.array([0.5, 0.5])
    else:
        pi = (first + pseudocount) / denom
    return Transitions(pi, trans, tuple(defaulted))


@dataclass(frozen=True, eq=False)
class HmmModel:
    pi: np.ndarray
    trans: np.ndarray
    glm: GlmFit
    series_ids: tuple
    train_window: tuple
    holdout_u: int
    window_years: int
    current_week: int
    defaulted_rows: tuple = ()
    pseudocount: float = 0.0

    @property
    def n_series(self) -> int:
        return len(self.series_ids)

    @property
    def window_length(self) -> int:
        return self.window_years * PERIOD

    def index_of(self, series_id: str) -> int:
        try:
            return self.series_ids.index(series_id)
        except ValueError:
            raise KeyError(f"series {series_id!r} not in model") from None


@dataclass(frozen=True)
class PosteriorResult:
    series_id: str
    week: int
    p_outbreak: float
    log_evidence: float


def train(group: SeriesGroup, current_week: int, window_years: int = 5,
          holdout_u: int = 26, pseudocount: float = 0.0) -> HmmModel:
    train_group, _ = train_test_split(group, current_week, window_years, holdout_u)
    if train_group.n_outbreak_weeks() == 0:
        raise TrainingError(
            f"group {group.group_id} has no outbreak week in its training window "
            f"(weeks {train_group.t_start}..{train_group.t_end}); regroup the series"
        )
    chain = estimate_transitions([s.label_array() for s in train_group.series], pseudocount)
    fit = irls_fit(PooledDesign.from_group(train_group))
    return HmmModel(chain.pi, chain.trans, fit, tuple(group.series_ids),
                    (train_group.t_start, train_group.t_end), holdout_u, window_years,
                    current_week, chain.defaulted_rows, float(pseudocount))


def _floored_log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(np.asarray(p, dtype=np.float64)), LOG_FLOOR)


def emission_logs(model: HmmModel, series_index: int, weeks, counts) -> np.ndarray:
    """Per-week log emissions ``(len(weeks), 2)``, floored at ``LOG_FLOOR``."""
    b = model.glm.series_beta(series_index)
    r = float(model.glm.size_r[series_index])
    z = covariate_matrix(weeks)
    eta0 = b[0] + z @ b[1:]
    mu = np.exp(np.column_stack([eta0, eta0 + model.glm.beta4]))
    y = np.asarray(counts, dtype=np.float64)[:, None]
    return np.maximum(kernels.nb_logpmf(y, mu, r), LOG_FLOOR)


def forward_posterior(model: HmmModel, series: SurveillanceSeries, series_index: int,
                      upto_week: int, clamp: bool = True) -> PosteriorResult:
    """Filtered probability that ``upto_week`` is an outbreak week.

    Runs over the ``window_years`` window ending at ``upto_week`` (or from
    the start of ``series`` if shorter). With ``clamp``, weeks with a known
    label are pinned to that state; unknown weeks are marginalized.
    """
    if not series.t_start <= upto_week <= series.t_end:
        raise ValueError(f"week {upto_week} outside series {series.series_id}")
    t_from = max(series.t_start, upto_week - model.window_length + 1)
    i, j = t_from - series.t_start, upto_week - series.t_start + 1
    weeks = np.arange(t_from, upto_week + 1)
    le = emission_logs(model, series_index, weeks, series.counts[i:j])
    if clamp and series.labels is not None:
        lab = series.labels[i:j]
        le[lab == ENDEMIC, 1] = -math.inf
        le[lab == OUTBREAK, 0] = -math.inf
    alpha = kernels.forward_log(le, _floored_log(model.pi), _floored_log(model.trans))
    a0, a1 = alpha[-1]
    evidence = np.logaddexp(a0, a1)
    if evidence == -math.inf:
        bad = int(np.argmax(np.all(alpha == -math.inf, axis=1)))
        raise NumericalError(
            f"series {series.series_id}: zero forward probability at week {t_from + bad}"
        )
    return PosteriorResult(series.series_id, upto_week, float(math.exp(a1 - evidence)),
                           float(evidence))


def group_posteriors(model: HmmModel, full_group: SeriesGroup, upto_week: int,
                     clamp: bool = True) -> list[PosteriorResult]:
    return [forward_posterior(model, s, model.index_of(s.series_id), upto_week, clamp)
            for s in full_group.series]


def model_to_dict(model: HmmModel, grid_start_week: str | None = None,
                  group_id: str | None = None) -> dict:
    g = model.glm
    return {
        "schema": SCHEMA_VERSION,
        "group_id": group_id,
        "grid_start_week": grid_start_week,
        "series_ids": list(model.series_ids),
        "current_week": model.current_week,
        "train_window": list(model.train_window),
        "holdout_u": model.holdout_u,
        "window_years": model.window_years,
        "pi": [float(x) for x in model.pi],
        "trans": [[float(x) for x in row] for row in model.trans],
        "defaulted_rows": list(model.defaulted_rows),
        "pseudocount": float(model.pseudocount),
        "glm": {
            "beta": [float(x) for x in g.beta],
            "size_r": [float(x) for x in g.size_r],
            "converged": bool(g.converged),
            "iterations": int(g.iterations),
            "log_likelihood": float(g.log_likelihood),
            "zero_series": list(g.zero_series),
            "beta4_capped": bool(g.beta4_capped),
            "shared_identified": bool(g.shared_identified),
        },
    }


def model_from_dict(doc: dict) -> HmmModel:
    if doc.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    g = doc["glm"]
    fit = GlmFit(np.array(g["beta"], dtype=np.float64), np.array(g["size_r"], dtype=np.float64),
                 g["converged"], g["iterations"], g["log_likelihood"], tuple(g["zero_series"]),
                 g["beta4_capped"], g["shared_identified"])
    return HmmModel(np.array(doc["pi"], dtype=np.float64), np.array(doc["trans"], dtype=np.float64),
                    fit, tuple(doc["series_ids"]), tuple(doc["train_window"]), doc["holdout_u"],
                    doc["window_years"], doc["current_week"], tuple(doc["defaulted_rows"]),
                    doc.get("pseudocount", 0.0))
