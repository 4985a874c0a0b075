"""Pure-Python versions of the hot kernels.

Mirrors the signatures in ``_core.pyx`` exactly; used when the compiled
extension is unavailable or ``OUTBREAK_HMM_PURE=1`` is set.
"""

import math

import numpy as np
from scipy.special import betaln, polygamma, psi


def forward_log(log_emis, log_pi, log_trans):
    """Log-space forward recursion.

    Parameters
    ----------
    log_emis : ndarray, shape (L, K)
        Log emission densities per step and state.
    log_pi : ndarray, shape (K,)
        Log initial distribution.
    log_trans : ndarray, shape (K, K)
        Log transition matrix, rows indexed by the departing state.

    Returns
    -------
    ndarray, shape (L, K)
        ``alpha[t, i] = log Pr(o_1..o_t, s_t = i)``.
    """
    log_emis = np.asarray(log_emis, dtype=np.float64)
    n_steps, n_states = log_emis.shape
    emis = log_emis.tolist()
    trans = np.asarray(log_trans, dtype=np.float64).tolist()
    prev = [float(p) + e for p, e in zip(log_pi, emis[0])]
    out = [prev]
    ninf = -math.inf
    for t in range(1, n_steps):
        row = emis[t]
        cur = []
        for j in range(n_states):
            terms = [prev[i] + trans[i][j] for i in range(n_states)]
            m = max(terms)
            if m == ninf:
                cur.append(ninf)
                continue
            s = 0.0
            for v in terms:
                s += math.exp(v - m)
            cur.append(m + math.log(s) + row[j])
        out.append(cur)
        prev = cur
    return np.array(out, dtype=np.float64).reshape(n_steps, n_states)


def nb_logpmf(k, mu, r):
    """Negative-binomial log-pmf with mean ``mu`` and size ``r`` (broadcast)."""
    k = np.asarray(k, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    k, mu, r = np.broadcast_arrays(k, mu, r)
    shape = k.shape
    k, mu, r = k.ravel(), mu.ravel(), r.ravel()
    out = -r * np.log1p(mu / r)
    pos = k > 0
    if np.any(pos):
        kp, mp, rp = k[pos], mu[pos], r[pos]
        out[pos] += -betaln(kp, rp) - np.log(kp) + kp * (np.log(mp) - np.log(rp + mp))
    return out.reshape(shape)


def nb_size_derivs(y, mu, r):
    """Per-observation first and second derivative of the NB log-pmf in ``r``."""
    y, mu, r = np.broadcast_arrays(np.asarray(y, dtype=np.float64),
                                   np.asarray(mu, dtype=np.float64),
                                   np.asarray(r, dtype=np.float64))
    rm = r + mu
    d1 = psi(y + r) - psi(r) + np.log(r / rm) + (mu - y) / rm
    d2 = polygamma(1, y + r) - polygamma(1, r) + 1.0 / r - 1.0 / rm - (mu - y) / (rm * rm)
    return d1, d2
