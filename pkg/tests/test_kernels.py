import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import polygamma, psi

from outbreak_hmm import _core_py, kernels

try:
    from outbreak_hmm import _core
except ImportError:  # pragma: no cover - extension not built
    _core = None

from oracles import nb_pmf_mp

BACKENDS = [_core_py] + ([_core] if _core is not None else [])
ids = [b.__name__.rsplit(".", 1)[-1] for b in BACKENDS]


def test_compiled_backend_selected():
    if _core is None:
        pytest.skip("extension not built")
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
@pytest.mark.parametrize("k,mu,r", [(0, 1.0, 1.0), (3, 2.0, 4.0), (7, 0.5, 0.01),
                                    (120, 80.0, 3.0), (10 ** 6, 10 ** 6, 3.0)])
def test_nb_logpmf_matches_mpmath(impl, k, mu, r):
    import mpmath
    expected = float(mpmath.log(nb_pmf_mp(k, mu, r)))
    assert impl.nb_logpmf(k, mu, r) == pytest.approx(expected, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
def test_nb_logpmf_poisson_limit(impl):
    assert impl.nb_logpmf(2, 2.0, 1e9) == pytest.approx(math.log(math.exp(-2) * 4 / 2), abs=1e-6)


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
def test_nb_logpmf_broadcast_shapes(impl):
    k = np.arange(6).reshape(3, 2)
    out = impl.nb_logpmf(k, 2.0, np.array([1.0, 5.0]))
    assert out.shape == (3, 2)
    ref = stats.nbinom.logpmf(k, np.array([1.0, 5.0]), np.array([1.0, 5.0]) / (np.array([1.0, 5.0]) + 2))
    assert np.allclose(out, ref, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3000), st.floats(1e-3, 1e3), st.floats(1e-3, 1e5))
def test_backends_agree_logpmf(k, mu, r):
    vals = [float(b.nb_logpmf(k, mu, r)) for b in BACKENDS]
    assert max(vals) - min(vals) <= 1e-10 * (1 + abs(vals[0]))


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
def test_size_derivs_against_scipy(impl):
    rng = np.random.default_rng(3)
    y = np.r_[rng.integers(0, 60, 200), rng.integers(65, 3000, 200)].astype(float)
    mu = rng.uniform(0.05, 300, y.size)
    r = np.exp(rng.uniform(np.log(1e-3), np.log(1e5), y.size))
    d1, d2 = impl.nb_size_derivs(y, mu, r)
    rm = r + mu
    ref1 = psi(y + r) - psi(r) + np.log(r / rm) + (mu - y) / rm
    ref2 = polygamma(1, y + r) - polygamma(1, r) + 1 / r - 1 / rm - (mu - y) / rm ** 2
    assert np.allclose(d1, ref1, rtol=1e-9, atol=1e-12)
    assert np.allclose(d2, ref2, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
def test_size_derivs_finite_difference(impl):
    y, mu, r, h = 7.0, 3.0, 2.5, 1e-6
    d1, d2 = impl.nb_size_derivs(y, mu, r)
    f = lambda rr: float(impl.nb_logpmf(y, mu, rr))  # noqa: E731
    assert float(d1) == pytest.approx((f(r + h) - f(r - h)) / (2 * h), rel=1e-6)
    g = lambda rr: float(impl.nb_size_derivs(y, mu, rr)[0])  # noqa: E731
    assert float(d2) == pytest.approx((g(r + h) - g(r - h)) / (2 * h), rel=1e-5)


def _naive_forward(le, lpi, ltr):
    out = np.empty_like(le)
    out[0] = lpi + le[0]
    for t in range(1, len(le)):
        for j in range(le.shape[1]):
            out[t, j] = np.logaddexp.reduce(out[t - 1] + ltr[:, j]) + le[t, j]
    return out


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
@pytest.mark.parametrize("K", [2, 3])
def test_forward_matches_naive(impl, K):
    rng = np.random.default_rng(K)
    le = rng.normal(-3, 2, size=(40, K))
    le[5, 0] = -np.inf
    lpi = np.log(rng.dirichlet(np.ones(K)))
    ltr = np.log(rng.dirichlet(np.ones(K), size=K))
    assert np.allclose(impl.forward_log(le, lpi, ltr), _naive_forward(le, lpi, ltr), rtol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS, ids=ids)
def test_forward_all_blocked_is_minus_inf(impl):
    le = np.zeros((3, 2))
    le[1] = -np.inf
    a = impl.forward_log(le, np.log([0.5, 0.5]), np.log([[0.5, 0.5], [0.5, 0.5]]))
    assert np.all(np.isneginf(a[1:]))


def test_forward_backends_agree():
    if _core is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(11)
    le = rng.normal(-4, 3, size=(300, 2))
    lpi = np.log([0.9, 0.1])
    ltr = np.log([[0.95, 0.05], [0.5, 0.5]])
    assert np.allclose(_core.forward_log(le, lpi, ltr), _core_py.forward_log(le, lpi, ltr),
                       rtol=1e-13, atol=0)
