# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: log-space forward recursion, NB log-pmf and the
NB size derivatives used by the dispersion update."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY
from scipy.special.cython_special cimport betaln, psi

cnp.import_array()


def forward_log(log_emis, log_pi, log_trans):
    cdef const double[:, ::1] e = np.ascontiguousarray(log_emis, dtype=np.float64)
    cdef const double[::1] lp = np.ascontiguousarray(log_pi, dtype=np.float64)
    cdef const double[:, ::1] lt = np.ascontiguousarray(log_trans, dtype=np.float64)
    cdef Py_ssize_t n_steps = e.shape[0], n_states = e.shape[1]
    out_arr = np.empty((n_steps, n_states), dtype=np.float64)
    cdef double[:, ::1] a = out_arr
    cdef Py_ssize_t t, i, j
    cdef double m, s, v
    for i in range(n_states):
        a[0, i] = lp[i] + e[0, i]
    for t in range(1, n_steps):
        for j in range(n_states):
            m = -INFINITY
            for i in range(n_states):
                v = a[t - 1, i] + lt[i, j]
                if v > m:
                    m = v
            if m == -INFINITY:
                a[t, j] = -INFINITY
                continue
            s = 0.0
            for i in range(n_states):
                s += exp(a[t - 1, i] + lt[i, j] - m)
            a[t, j] = m + log(s) + e[t, j]
    return out_arr


def nb_logpmf(k, mu, r):
    kb, mb, rb = np.broadcast_arrays(
        np.asarray(k, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
        np.asarray(r, dtype=np.float64),
    )
    shape = kb.shape
    cdef const double[::1] kv = np.ascontiguousarray(kb).ravel()
    cdef const double[::1] mv = np.ascontiguousarray(mb).ravel()
    cdef const double[::1] rv = np.ascontiguousarray(rb).ravel()
    cdef Py_ssize_t n = kv.shape[0], idx
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out_arr
    cdef double kk, mm, rr, val
    with nogil:
        for idx in range(n):
            kk = kv[idx]
            mm = mv[idx]
            rr = rv[idx]
            val = -rr * log1p(mm / rr)
            if kk > 0:
                val += -betaln(kk, rr) - log(kk) + kk * (log(mm) - log(rr + mm))
            o[idx] = val
    return out_arr.reshape(shape)


cdef double _trigamma(double x) noexcept nogil:
    cdef double acc = 0.0, inv, inv2
    while x < 6.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    return acc + inv + 0.5 * inv2 + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0
        - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))))


def nb_size_derivs(y, mu, r):
    yb, mb, rb = np.broadcast_arrays(
        np.asarray(y, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
        np.asarray(r, dtype=np.float64),
    )
    shape = yb.shape
    cdef const double[::1] yv = np.ascontiguousarray(yb).ravel()
    cdef const double[::1] mv = np.ascontiguousarray(mb).ravel()
    cdef const double[::1] rv = np.ascontiguousarray(rb).ravel()
    cdef Py_ssize_t n = yv.shape[0], idx, j, k
    d1_arr = np.empty(n, dtype=np.float64)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] d1 = d1_arr
    cdef double[::1] d2 = d2_arr
    cdef double yy, mm, rr, rm, dg, tg, q
    with nogil:
        for idx in range(n):
            yy = yv[idx]
            mm = mv[idx]
            rr = rv[idx]
            k = <Py_ssize_t> yy
            if k <= 64:
                dg = 0.0
                tg = 0.0
                for j in range(k):
                    q = 1.0 / (rr + j)
                    dg += q
                    tg -= q * q
            else:
                dg = psi(yy + rr) - psi(rr)
                tg = _trigamma(yy + rr) - _trigamma(rr)
            rm = rr + mm
            d1[idx] = dg + log(rr / rm) + (mm - yy) / rm
            d2[idx] = tg + 1.0 / rr - 1.0 / rm - (mm - yy) / (rm * rm)
    return d1_arr.reshape(shape), d2_arr.reshape(shape)
