"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Times ``forward_log``, ``nb_logpmf`` and ``nb_size_derivs`` on both
backends, checks that they agree, and then times one rolling HMM run
per backend in a subprocess (``OUTBREAK_HMM_PURE=1`` selects the
fallback at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from outbreak_hmm import _core_py

try:
    from outbreak_hmm import _core
except ImportError:
    _core = None

ROLLING = """
import time
from outbreak_hmm import kernels
from outbreak_hmm.pipeline import RollingConfig, rolling_hmm
from outbreak_hmm.series import SeriesGroup
from outbreak_hmm.simulator import SCENARIOS, simulate_scenario
g = SeriesGroup("g", tuple(s.series for s in simulate_scenario(SCENARIOS[9], 10, 1)))
t = time.perf_counter()
rolling_hmm(g, range(521, 561), RollingConfig(window_years=5, refit_every=4))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    L = 260
    emis = np.log(rng.random((L, 2)))
    lpi = np.log([0.9, 0.1])
    ltr = np.log([[0.95, 0.05], [0.5, 0.5]])
    k = rng.poisson(20, 20_000).astype(float)
    mu = rng.uniform(0.5, 60, 20_000)
    r = rng.uniform(0.3, 50, 20_000)
    return {
        "forward_log (L=260)": lambda m: m.forward_log(emis, lpi, ltr),
        "nb_logpmf (n=20000)": lambda m: m.nb_logpmf(k, mu, r),
        "nb_size_derivs (n=20000)": lambda m: m.nb_size_derivs(k, mu, r),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-rolling", action="store_true")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'cython':>10s} {'python':>10s} {'speedup':>8s}  max abs diff")
    for name, fn in cases(rng).items():
        a, b = fn(_core), fn(_core_py)
        diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y))))
                   for x, y in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                                   np.atleast_1d(b) if not isinstance(b, tuple) else b))
        tc = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat))
        tp = min(timeit.repeat(lambda: fn(_core_py), number=1, repeat=args.repeat))
        print(f"{name:28s} {1e3 * tc:8.2f}ms {1e3 * tp:8.2f}ms {tp / tc:7.1f}x  {diff:.1e}")
    if not args.skip_rolling:
        print("\nrolling HMM, 10 series x 40 weeks, refit every 4:")
        for pure in ("0", "1"):
            env = dict(os.environ, OUTBREAK_HMM_PURE=pure)
            out = subprocess.run([sys.executable, "-c", ROLLING], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            print(f"  {out[0]:8s} {float(out[1]):7.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
