"""Seasonal NB threshold detector ("nb-plugin-baseline").

A simplified comparator with plug-in NB alarm semantics: fit a log-link NB
regression (trend plus annual harmonic) on the past window without the
latest ``holdout_u`` weeks and without labeled outbreak weeks, predict the
current week, and alarm when the count reaches the ``1 - alpha`` tail
threshold. It has no factor levels and no residual reweighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NumericalError
from .nbglm import ZERO_SERIES_MU, PooledDesign, irls_fit
from .series import OUTBREAK, PERIOD, SeriesGroup, SurveillanceSeries, covariate_matrix
from .simulator import alarm_threshold

log = logging.getLogger(__name__)

NAME = "nb-plugin-baseline"


@dataclass(frozen=True)
class BaselineFit:
    beta: np.ndarray
    size_r: float
    window: tuple
    fallback: bool = False

    def mean_at(self, t) -> np.ndarray:
        z = covariate_matrix(np.atleast_1d(t))
        return np.exp(self.beta[0] + z @ self.beta[1:])


@dataclass(frozen=True)
class BaselineScore:
    p_value: float
    alarm: bool
    threshold: int
    mu: float
    size_r: float
    fallback: bool = False


def _window(current_week, window_years, holdout_u, t_start):
    t_from = current_week - window_years * PERIOD + 1
    t_to = current_week - holdout_u
    if t_from < t_start:
        raise ValueError(f"week {current_week} needs {window_years * PERIOD} weeks of history")
    return t_from, t_to


def fit_baseline_arrays(counts: np.ndarray, labels: np.ndarray | None, t_from: int,
                        t_to: int, t_start: int = 1) -> list[BaselineFit]:
    """Fit every row of ``counts`` (series x weeks on one grid) jointly.

    The series blocks are independent, so one block-structured IRLS call
    gives the same estimates as separate fits.
    """
    counts = np.atleast_2d(counts)
    n_series = counts.shape[0]
    i, j = t_from - t_start, t_to - t_start + 1
    y = counts[:, i:j].astype(np.float64)
    weeks = np.arange(t_from, t_to + 1)
    keep = np.ones_like(y, dtype=bool)
    if labels is not None:
        keep = np.atleast_2d(labels)[:, i:j] != OUTBREAK
    idx = np.repeat(np.arange(n_series), y.shape[1]).reshape(y.shape)
    tt = np.broadcast_to(weeks, y.shape)
    design = PooledDesign(idx[keep], tt[keep], np.zeros(int(keep.sum())), y[keep], n_series)
    try:
        fit = irls_fit(design, shared=False)
    except NumericalError:
        if n_series == 1:
            fit = None
        else:
            out = []
            for n in range(n_series):
                out.extend(fit_baseline_arrays(counts[n:n + 1],
                                               None if labels is None else np.atleast_2d(labels)[n:n + 1],
                                               t_from, t_to, t_start))
            return out
    out = []
    for n in range(n_series):
        yn = y[n][keep[n]]
        if fit is None or n in fit.zero_series or not np.all(np.isfinite(fit.series_beta(n))):
            mean = max(float(yn.mean()) if yn.size else 0.0, ZERO_SERIES_MU)
            log.info("baseline fallback to Poisson(mean=%.4g) for series %d", mean, n)
            out.append(BaselineFit(np.array([np.log(mean), 0.0, 0.0, 0.0]), np.inf,
                                   (t_from, t_to), True))
        else:
            out.append(BaselineFit(np.array(fit.series_beta(n)), float(fit.size_r[n]),
                                   (t_from, t_to)))
    return out


def fit_baseline(series: SurveillanceSeries, current_week: int, window_years: int = 5,
                 holdout_u: int = 26) -> BaselineFit:
    t_from, t_to = _window(current_week, window_years, holdout_u, series.t_start)
    labels = None if series.labels is None else series.labels[None, :]
    return fit_baseline_arrays(series.counts[None, :], labels, t_from, t_to, series.t_start)[0]


def predictive(mu, size_r):
    mu = np.asarray(mu, dtype=np.float64)
    r = np.asarray(size_r, dtype=np.float64)
    if np.all(np.isinf(r)):
        return stats.poisson(mu)
    if np.any(np.isinf(r)):
        raise ValueError("mixed Poisson/NB predictive; score series separately")
    return stats.nbinom(r, r / (r + mu))


def score_with_fits(fits, t: int, observed, alpha: float = 0.01) -> list[BaselineScore]:
    out = []
    for fit, obs in zip(fits, np.atleast_1d(observed)):
        mu = float(fit.mean_at(t)[0])
        dist = predictive(mu, fit.size_r)
        thr = int(alarm_threshold(dist, alpha)[0])
        p = float(dist.sf(int(obs) - 1))
        out.append(BaselineScore(min(max(p, 0.0), 1.0), bool(obs >= thr), thr, mu,
                                 fit.size_r, fit.fallback))
    return out


def baseline_score(series: SurveillanceSeries, current_week: int, alpha: float = 0.01,
                   window_years: int = 5, holdout_u: int = 26) -> BaselineScore:
    """p-value, alarm flag and count threshold for one series and week."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    fit = fit_baseline(series, current_week, window_years, holdout_u)
    obs = series.counts[current_week - series.t_start]
    return score_with_fits([fit], current_week, [obs], alpha)[0]


def group_baseline_fits(group: SeriesGroup, current_week: int, window_years: int = 5,
                        holdout_u: int = 26) -> list[BaselineFit]:
    t_from, t_to = _window(current_week, window_years, holdout_u, group.t_start)
    counts = np.stack([s.counts for s in group.series])
    labels = np.stack([s.label_array() for s in group.series])
    return fit_baseline_arrays(counts, labels, t_from, t_to, group.t_start)
