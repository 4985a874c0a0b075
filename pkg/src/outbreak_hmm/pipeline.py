"""Rolling retraining and detection over series groups, plus the
simulation benchmark that pits the HMM against the NB baseline."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .baseline import fit_baseline_arrays
from .errors import DataError, TrainingError
from .evaluation import ScoredWeek, build_report
from .hmm import LOG_FLOOR, emission_logs, train
from .series import ENDEMIC, OUTBREAK, PERIOD, SeriesGroup
from .simulator import alarm_threshold, get_scenario, simulate_scenario

log = logging.getLogger(__name__)

WORKERS_ENV = "OUTBREAK_HMM_WORKERS"


@dataclass(frozen=True)
class RollingConfig:
    window_years: int = 5
    holdout_u: int = 26
    refit_every: int = 1
    pseudocount: float = 0.0
    alpha: float = 0.01
    clamp: bool = True

    def __post_init__(self):
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        if self.window_years < 1:
            raise ValueError("window_years must be >= 1")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def map_ordered(fn, items, workers: int | None = None):
    """``map`` over a process pool; results keep input order."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _blocks(weeks, refit_every):
    weeks = sorted(set(int(w) for w in weeks))
    return [weeks[i:i + refit_every] for i in range(0, len(weeks), refit_every)]


def rolling_hmm(group: SeriesGroup, weeks, config: RollingConfig = RollingConfig()):
    """Posterior outbreak probabilities for every series and week.

    The model is retrained at the first week of each block of
    ``refit_every`` weeks. For week ``T`` the forward pass covers the
    window ending at ``T``; labels up to ``T - holdout_u`` are clamped.
    Returns ``{(series_id, week): (p_outbreak, log_evidence)}``.
    """
    L = config.window_years * PERIOD
    counts = np.stack([s.counts for s in group.series]).astype(np.float64)
    labels = np.stack([s.label_array() for s in group.series])
    t0 = group.t_start
    out = {}
    for block in _blocks(weeks, config.refit_every):
        model = train(group, block[0], config.window_years, config.holdout_u,
                      config.pseudocount)
        lpi = _safe_log(model.pi)
        ltr = _safe_log(model.trans)
        span_from, span_to = block[0] - L + 1, block[-1]
        if span_from < t0 or span_to > group.t_end:
            raise DataError(f"group {group.group_id}: weeks {span_from}..{span_to} not covered")
        weeks_span = np.arange(span_from, span_to + 1)
        for n, s in enumerate(group.series):
            le_all = emission_logs(model, n, weeks_span,
                                   counts[n, span_from - t0:span_to - t0 + 1])
            lab_all = labels[n, span_from - t0:span_to - t0 + 1]
            for T in block:
                i = T - L + 1 - span_from
                le = le_all[i:i + L].copy()
                if config.clamp:
                    lab = lab_all[i:i + L].copy()
                    if config.holdout_u:
                        lab[L - config.holdout_u:] = -1
                    le[lab == ENDEMIC, 1] = -math.inf
                    le[lab == OUTBREAK, 0] = -math.inf
                a0, a1 = kernels.forward_log(le, lpi, ltr)[-1]
                ev = float(np.logaddexp(a0, a1))
                if ev == -math.inf:
                    raise TrainingError(f"series {s.series_id}: zero evidence at week {T}")
                out[(s.series_id, T)] = (math.exp(a1 - ev), ev)
    return out


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(np.asarray(p, dtype=np.float64)), LOG_FLOOR)


def score_arrays(mu, size_r, observed, alpha):
    """Vectorized plug-in scoring; ``size_r = inf`` means Poisson."""
    mu = np.asarray(mu, dtype=np.float64)
    r = np.broadcast_to(np.asarray(size_r, dtype=np.float64), mu.shape)
    obs = np.asarray(observed, dtype=np.float64)
    p = np.empty(mu.shape)
    thr = np.empty(mu.shape, dtype=np.int64)
    pois = np.isinf(r)
    for mask, dist in ((pois, lambda m, rr: stats.poisson(m)),
                       (~pois, lambda m, rr: stats.nbinom(rr, rr / (rr + m)))):
        if not mask.any():
            continue
        d = dist(mu[mask], r[mask])
        p[mask] = d.sf(obs[mask] - 1)
        thr[mask] = alarm_threshold(d, alpha)
    p = np.clip(p, 0.0, 1.0)
    return p, thr, obs >= thr


def rolling_baseline(group: SeriesGroup, weeks, config: RollingConfig = RollingConfig()):
    """Baseline p-values per series and week: ``{(id, week): (p, threshold, alarm)}``."""
    L = config.window_years * PERIOD
    counts = np.stack([s.counts for s in group.series])
    labels = np.stack([s.label_array() for s in group.series])
    out = {}
    for block in _blocks(weeks, config.refit_every):
        T0 = block[0]
        if T0 - L + 1 < group.t_start:
            raise DataError(f"group {group.group_id}: week {T0} needs {L} weeks of history")
        if block[-1] > group.t_end:
            raise DataError(f"group {group.group_id}: week {block[-1]} beyond the data "
                            f"(last week {group.t_end})")
        fits = fit_baseline_arrays(counts, labels, T0 - L + 1, T0 - config.holdout_u,
                                   group.t_start)
        bw = np.array(block)
        mu = np.stack([f.mean_at(bw) for f in fits])
        r = np.array([f.size_r for f in fits])[:, None]
        obs = counts[:, bw - group.t_start]
        p, thr, alarm = score_arrays(mu, np.broadcast_to(r, mu.shape), obs, config.alpha)
        for n, s in enumerate(group.series):
            for k, T in enumerate(block):
                out[(s.series_id, T)] = (float(p[n, k]), int(thr[n, k]), bool(alarm[n, k]))
    return out


def assign_groups(series_ids, n_groups: int, seed: int, ok=None, max_attempts: int = 100):
    """Seeded balanced partition; re-draws until ``ok(group_ids)`` holds for every group."""
    ids = list(series_ids)
    if not 1 <= n_groups <= len(ids):
        raise ValueError(f"cannot split {len(ids)} series into {n_groups} groups")
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        perm = rng.permutation(len(ids))
        groups = [sorted(ids[i] for i in part) for part in np.array_split(perm, n_groups)]
        if ok is None or all(ok(g) for g in groups):
            if attempt:
                log.info("grouping accepted after %d re-draws", attempt)
            return groups
    raise TrainingError(
        f"no grouping into {n_groups} groups gave every group an outbreak week "
        f"after {max_attempts} attempts; use fewer groups"
    )


# -- simulation benchmark -------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    scenarios: tuple = tuple(range(1, 15))
    n_series: int = 50
    seed: int = 42
    groups_per_scenario: int = 2
    eval_weeks: int = 8 * PERIOD
    refit_every: int = 4
    window_years: int = 4
    holdout_u: int = 26
    alpha: float = 0.01


def _bench_task(args):
    cfg, scenario_id, group_index, members = args
    spec = get_scenario(scenario_id)
    sims = {s.series.series_id: s for s in simulate_scenario(spec, cfg.n_series, cfg.seed)}
    group = SeriesGroup(f"sc{scenario_id:02d}_g{group_index:02d}",
                        tuple(sims[m].series for m in members))
    T = spec.length_T
    weeks = list(range(T - cfg.eval_weeks + 1, T + 1))
    rc = RollingConfig(cfg.window_years, cfg.holdout_u, cfg.refit_every, alpha=cfg.alpha)
    hmm = rolling_hmm(group, weeks, rc)
    base = rolling_baseline(group, weeks, rc)
    rows = []
    for m in members:
        sim = sims[m]
        for t in weeks:
            lab = int(sim.series.labels[t - 1])
            p_h = hmm[(m, t)][0]
            p_b, _, alarm = base[(m, t)]
            size = int(round(sim.excess[t - 1])) if lab == OUTBREAK else None
            rows.append(ScoredWeek(m, t, lab, p_h, 1.0 - p_b, size, alarm,
                                   f"scenario_{scenario_id:02d}"))
    return rows


def benchmark_tasks(cfg: BenchmarkConfig):
    tasks = []
    for sid in cfg.scenarios:
        spec = get_scenario(sid)
        ids = [f"sc{spec.id:02d}_{i + 1:04d}" for i in range(cfg.n_series)]
        groups = assign_groups(ids, cfg.groups_per_scenario, cfg.seed + sid)
        tasks.extend((cfg, sid, g, members) for g, members in enumerate(groups))
    return tasks


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), workers: int | None = None):
    """Simulate, detect with both methods, and score. Returns ``(scored, report)``."""
    rows = []
    for part in map_ordered(_bench_task, benchmark_tasks(cfg), workers):
        rows.extend(part)
    return rows, build_report(rows, cfg.alpha)
