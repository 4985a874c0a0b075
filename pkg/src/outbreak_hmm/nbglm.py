"""Negative-binomial log-link regression fit by IRLS.

The pooled design has a block of four columns per series (intercept,
trend, cos, sin) and one outbreak-indicator column shared by all series.
The weighted normal equations therefore have an arrow structure: 4x4
diagonal blocks coupled only through the last column. ``irls_fit`` solves
them by eliminating the blocks (Schur complement on the shared column), so
a pooled fit costs O(rows) rather than O(rows * N^2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import kernels
from .errors import NumericalError
from .series import OUTBREAK, SeriesGroup, covariate_matrix

log = logging.getLogger(__name__)

R_MIN, R_MAX = 1e-3, 1e6
ZERO_SERIES_MU = 1e-3
ZERO_SERIES_R = 1e3
BETA4_CAP = math.log(1e3)
MAX_HALVINGS = 10
_BLOCK = 4


def nb_log_pmf(k, mu, r) -> float:
    """Log-probability of ``k`` under NB(mean ``mu``, size ``r``).

    ``r`` is the size parameter, so the variance is ``mu + mu**2 / r``.
    """
    if isinstance(k, bool) or int(k) != k or k < 0:
        raise ValueError(f"k must be a non-negative integer, got {k!r}")
    if not (mu > 0 and math.isfinite(mu)):
        raise ValueError(f"mu must be positive and finite, got {mu!r}")
    if not (r > 0 and math.isfinite(r)):
        raise ValueError(f"r must be positive and finite, got {r!r}")
    return float(kernels.nb_logpmf(float(k), float(mu), float(r)))


@dataclass(frozen=True, eq=False)
class PooledDesign:
    """Rows of the pooled regression, sorted by series.

    Only ``series_index``, ``t``, ``outbreak`` and ``y`` are stored; the
    block design is implicit. ``dense()`` materializes the full
    ``rows x (4N + 1)`` matrix for inspection and tests.
    """

    series_index: np.ndarray
    t: np.ndarray
    outbreak: np.ndarray
    y: np.ndarray
    n_series: int

    def __post_init__(self):
        idx = np.asarray(self.series_index, dtype=np.int64)
        order = np.argsort(idx, kind="stable")
        for name, dtype in (("series_index", np.int64), ("t", np.float64),
                            ("outbreak", np.float64), ("y", np.float64)):
            arr = np.asarray(getattr(self, name), dtype=dtype)[order]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.series_index.size and (self.series_index.min() < 0
                                       or self.series_index.max() >= self.n_series):
            raise ValueError("series_index out of range")
        if np.any(self.y < 0):
            raise ValueError("negative response")
        if not np.all(np.isin(self.outbreak, (0.0, 1.0))):
            raise ValueError("outbreak indicator must be 0 or 1")

    @classmethod
    def from_group(cls, group: SeriesGroup) -> "PooledDesign":
        """Rows for every week with a known label."""
        idx, ts, s, y = [], [], [], []
        for n, ser in enumerate(group.series):
            lab = ser.label_array()
            keep = lab >= 0
            idx.append(np.full(int(keep.sum()), n))
            ts.append(ser.weeks[keep])
            s.append((lab[keep] == OUTBREAK).astype(float))
            y.append(ser.counts[keep])
        return cls(np.concatenate(idx), np.concatenate(ts), np.concatenate(s),
                   np.concatenate(y), group.N)

    @property
    def n_rows(self) -> int:
        return int(self.y.size)

    @property
    def n_columns(self) -> int:
        return _BLOCK * self.n_series + 1

    def local(self) -> np.ndarray:
        """Per-row series-block entries ``(1, t, cos, sin)``."""
        z = covariate_matrix(self.t)
        return np.column_stack([np.ones(self.n_rows), z])

    def dense(self) -> np.ndarray:
        X = np.zeros((self.n_rows, self.n_columns))
        rows = np.arange(self.n_rows)
        loc = self.local()
        for k in range(_BLOCK):
            X[rows, _BLOCK * self.series_index + k] = loc[:, k]
        X[:, -1] = self.outbreak
        return X


@dataclass(frozen=True, eq=False)
class GlmFit:
    beta: np.ndarray
    size_r: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    zero_series: tuple = ()
    beta4_capped: bool = False
    shared_identified: bool = True
    deviance_trace: list = field(default_factory=list)
    loglik_trace: list = field(default_factory=list)

    @property
    def n_series(self) -> int:
        return int(self.size_r.size)

    @property
    def beta4(self) -> float:
        return float(self.beta[-1])

    def series_beta(self, n: int) -> np.ndarray:
        if not 0 <= n < self.n_series:
            raise IndexError(f"series index {n} out of range for {self.n_series} series")
        return self.beta[_BLOCK * n:_BLOCK * n + _BLOCK]


def predict_mu(fit: GlmFit, series_index: int, covariates, state) -> np.ndarray | float:
    """Expected count for one series at given covariates and state.

    ``covariates`` is a ``CovariateRow`` or an ``(n, 3)`` array of
    ``(t, cos, sin)`` rows; ``state`` is 0/1 or an array of them.
    """
    b = fit.series_beta(series_index)
    if hasattr(covariates, "trend"):
        eta = (b[0] + b[1] * covariates.trend + b[2] * covariates.cos_term
               + b[3] * covariates.sin_term + fit.beta4 * state)
        return math.exp(eta)
    z = np.asarray(covariates, dtype=np.float64)
    eta = b[0] + z @ b[1:] + fit.beta4 * np.asarray(state, dtype=np.float64)
    return np.exp(eta)


def nb_deviance(y, mu, r) -> float:
    return float(2.0 * np.sum(xlogy(y, y / mu) - (y + r) * np.log((y + r) / (mu + r))))


def nb_loglik(y, mu, r) -> float:
    return float(np.sum(kernels.nb_logpmf(y, mu, r)))


def _moment_size(y, starts, counts) -> np.ndarray:
    m = np.add.reduceat(y, starts) / counts
    ss = np.add.reduceat(y * y, starts)
    var = (ss - counts * m * m) / np.maximum(counts - 1, 1)
    r = m * m / np.maximum(var - m, 1e-6)
    return np.clip(np.where(m > 0, r, 1.0), R_MIN, R_MAX)


def _ill_conditioned(A: np.ndarray) -> bool:
    ev = np.linalg.eigvalsh(A)
    return bool(np.any(ev[:, 0] <= 1e-12 * np.maximum(ev[:, -1], 1e-300)))


def _singular_column(A: np.ndarray) -> int:
    """Index (within the stacked blocks) of the first column whose pivot vanishes."""
    for n in range(A.shape[0]):
        for k in range(1, _BLOCK + 1):
            sub = A[n, :k, :k]
            try:
                np.linalg.cholesky(sub)
            except np.linalg.LinAlgError:
                return _BLOCK * n + k - 1
            if _ill_conditioned(sub[None]):
                return _BLOCK * n + k - 1
    return -1


class _Problem:
    """Working state for one IRLS fit over the non-degenerate series."""

    def __init__(self, design: PooledDesign, active: np.ndarray):
        keep = np.isin(design.series_index, active)
        self.n_total = design.n_series
        self.active = active
        remap = np.full(design.n_series, -1)
        remap[active] = np.arange(active.size)
        self.sidx = remap[design.series_index[keep]]
        self.y = design.y[keep]
        self.s = design.outbreak[keep]
        t = design.t[keep]
        self.center = float(np.mean(t)) if t.size else 0.0
        z = covariate_matrix(t)
        # centred, year-scaled trend keeps the 4x4 blocks well conditioned
        self.X = np.column_stack([np.ones(t.size), (t - self.center) / 52.0, z[:, 1], z[:, 2]])
        self.n = active.size
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.sidx) != 0])
        self.counts = np.diff(np.r_[self.starts, self.sidx.size])
        self.shared = bool(np.any(self.s > 0))

    def eta(self, local_beta: np.ndarray, beta4: float) -> np.ndarray:
        return np.einsum("ij,ij->i", self.X, local_beta[self.sidx]) + beta4 * self.s

    def per_series(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values, self.starts, axis=0)

    def solve(self, w: np.ndarray, z: np.ndarray):
        X, s = self.X, self.s
        wx = X * w[:, None]
        A = self.per_series(wx[:, :, None] * X[:, None, :])
        g = self.per_series(wx * z[:, None])
        b = self.per_series(wx * s[:, None])
        if _ill_conditioned(A):
            col = _singular_column(A)
            n, k = divmod(col, _BLOCK)
            raise NumericalError(
                f"singular weighted normal equations at column {_BLOCK * int(self.active[n]) + k}"
            ) from None
        rhs = np.linalg.solve(A, np.stack([g, b], axis=2))
        Ag, Ab = rhs[..., 0], rhs[..., 1]
        beta4 = 0.0
        if self.shared:
            schur = float(np.sum(w * s * s) - np.sum(b * Ab))
            if not schur > 1e-12 * max(float(np.sum(w * s * s)), 1.0):
                raise NumericalError(
                    f"singular weighted normal equations at column {_BLOCK * self.n_total}"
                )
            beta4 = (float(np.sum(w * s * z)) - float(np.sum(b * Ag))) / schur
        capped = abs(beta4) > BETA4_CAP
        if capped:
            beta4 = math.copysign(BETA4_CAP, beta4)
        return Ag - Ab * beta4, beta4, capped


def _dispersion_update(prob: _Problem, mu: np.ndarray, r_old: np.ndarray) -> np.ndarray:
    """Per-series profile ML for the NB size, safeguarded Newton in log r."""
    y = prob.y
    lo = np.full(prob.n, math.log(R_MIN))
    hi = np.full(prob.n, math.log(R_MAX))

    def score(theta):
        r = np.exp(theta)[prob.sidx]
        d1, d2 = kernels.nb_size_derivs(y, mu, r)
        sc = prob.per_series(d1)
        h = prob.per_series(d2)
        rr = np.exp(theta)
        return rr * sc, rr * rr * h + rr * sc

    s_lo, _ = score(lo)
    s_hi, _ = score(hi)
    theta = np.clip(np.log(r_old), lo, hi)
    done = np.zeros(prob.n, dtype=bool)
    out = theta.copy()
    out[s_hi >= 0] = hi[s_hi >= 0]
    out[s_lo <= 0] = lo[s_lo <= 0]
    done |= (s_hi >= 0) | (s_lo <= 0)
    for _ in range(200):
        if done.all():
            break
        sc, h = score(theta)
        lo = np.where(sc > 0, theta, lo)
        hi = np.where(sc < 0, theta, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(h < 0, -sc / h, np.nan)
        cand = theta + step
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        cand = np.where(bad, 0.5 * (lo + hi), cand)
        conv = (np.abs(cand - theta) < 1e-10) | (sc == 0) | (hi - lo < 1e-12)
        newly = conv & ~done
        out[newly] = cand[newly]
        done |= conv
        theta = np.where(done, theta, cand)
    out[~done] = theta[~done]
    r_new = np.exp(out)
    # keep the old size where the new root is not an improvement (non-unique stationary points)
    ll_new = prob.per_series(kernels.nb_logpmf(y, mu, r_new[prob.sidx]))
    ll_old = prob.per_series(kernels.nb_logpmf(y, mu, r_old[prob.sidx]))
    return np.where(ll_new >= ll_old, r_new, r_old)


def _irls(prob: _Problem, local_beta, beta4, r, max_iter, tol, start_eta=None):
    """IRLS for the mean model at fixed sizes. Returns (local_beta, beta4, capped, trace, iters, ok)."""
    y = prob.y
    rr = r[prob.sidx]
    eta = prob.eta(local_beta, beta4) if start_eta is None else start_eta
    mu = np.exp(eta)
    dev_old = nb_deviance(y, mu, rr) if start_eta is None else math.inf
    trace = [] if start_eta is not None else [dev_old]
    capped = False
    for it in range(1, max_iter + 1):
        w = mu / (1.0 + mu / rr)
        z = eta + (y - mu) / mu
        new_local, new_b4, capped = prob.solve(w, z)
        new_eta = prob.eta(new_local, new_b4)
        dev = nb_deviance(y, np.exp(new_eta), rr)
        halvings = 0
        while (not math.isfinite(dev) or dev > dev_old + 1e-10 * (abs(dev_old) + 1.0)) \
                and halvings < MAX_HALVINGS and math.isfinite(dev_old):
            new_local = 0.5 * (new_local + local_beta)
            new_b4 = 0.5 * (new_b4 + beta4)
            new_eta = prob.eta(new_local, new_b4)
            dev = nb_deviance(y, np.exp(new_eta), rr)
            halvings += 1
        if not math.isfinite(dev) or dev > dev_old + 1e-10 * (abs(dev_old) + 1.0):
            # no descent direction left; the previous iterate is the optimum reachable
            return local_beta, beta4, capped, trace, it, True
        local_beta, beta4, eta, mu = new_local, new_b4, new_eta, np.exp(new_eta)
        trace.append(dev)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            return local_beta, beta4, capped, trace, it, True
        dev_old = dev
    return local_beta, beta4, capped, trace, max_iter, False


def irls_fit(design: PooledDesign, max_iter: int = 100, tol: float = 1e-8,
             shared: bool = True) -> GlmFit:
    """Fit per-series seasonal NB regressions with a shared outbreak effect.

    Alternates IRLS for the coefficients at fixed sizes with a per-series
    maximum-likelihood update of the sizes, until the relative change in
    the log-likelihood drops below ``tol``. ``shared=False`` drops the
    outbreak column (coefficient reported as 0).
    """
    N = design.n_series
    totals = np.bincount(design.series_index, weights=design.y, minlength=N)
    nrows = np.bincount(design.series_index, minlength=N)
    zero = np.flatnonzero((totals == 0) | (nrows == 0))
    active = np.flatnonzero((totals > 0) & (nrows > 0))
    if zero.size:
        log.warning("series %s have no positive training counts; intercept clamped",
                    zero.tolist())

    beta = np.zeros(_BLOCK * N + 1)
    r_all = np.full(N, ZERO_SERIES_R)
    for n in zero:
        beta[_BLOCK * n] = math.log(ZERO_SERIES_MU)
    if active.size == 0:
        return GlmFit(beta, r_all, True, 0, float("nan"), tuple(int(i) for i in zero),
                      shared_identified=False)

    prob = _Problem(design, active)
    if not shared:
        prob.shared = False
        prob.s = np.zeros_like(prob.s)
    y = prob.y
    r = _moment_size(y, prob.starts, prob.counts)
    local = np.zeros((prob.n, _BLOCK))
    b4 = 0.0

    dev_traces, ll_trace = [], []
    local, b4, capped, trace, iters, ok = _irls(
        prob, local, b4, r, max_iter, tol, start_eta=np.log(y + 0.1))
    dev_traces.append(trace)
    total_iter = iters
    ll = nb_loglik(y, np.exp(prob.eta(local, b4)), r[prob.sidx])
    ll_trace.append(ll)
    converged = False
    for _ in range(max_iter):
        mu = np.exp(prob.eta(local, b4))
        r = _dispersion_update(prob, mu, r)
        ll_trace.append(nb_loglik(y, mu, r[prob.sidx]))
        local, b4, capped, trace, iters, ok = _irls(prob, local, b4, r, max_iter, tol)
        dev_traces.append(trace)
        total_iter += iters
        ll_new = nb_loglik(y, np.exp(prob.eta(local, b4)), r[prob.sidx])
        ll_trace.append(ll_new)
        if ok and abs(ll_new - ll) / (abs(ll_new) + 0.1) < tol:
            ll = ll_new
            converged = True
            break
        ll = ll_new

    # back to the raw week index: b0 - b1 * c / 52, b1 / 52
    for j, n in enumerate(active):
        b = local[j]
        beta[_BLOCK * n:_BLOCK * n + _BLOCK] = (
            b[0] - b[1] * prob.center / 52.0, b[1] / 52.0, b[2], b[3])
        r_all[n] = r[j]
    beta[-1] = b4
    if not converged:
        log.warning("IRLS did not converge after %d outer iterations", max_iter)
    return GlmFit(beta, r_all, converged, total_iter, ll, tuple(int(i) for i in zero),
                  capped, prob.shared, dev_traces, ll_trace)


def loglik_at(design: PooledDesign, beta: np.ndarray, size_r: np.ndarray) -> float:
    """Log-likelihood of ``design`` at coefficients ``beta`` (raw scale) and sizes."""
    X = design.dense()
    mu = np.exp(X @ beta)
    return nb_loglik(design.y, mu, np.asarray(size_r)[design.series_index])
