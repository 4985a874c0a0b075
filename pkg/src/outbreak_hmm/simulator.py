"""Benchmark series under the 14 seasonal scenarios.

Endemic counts are NB with mean ``mu_t`` and variance ``phi * mu_t``
(Poisson when ``phi == 1``); the NB size is therefore ``mu / (phi - 1)``
and the success probability a constant ``1 / phi``. Outbreak weeks draw
from the same family with a mean calibrated so that an upper-tail test at
level ``alpha`` against the endemic distribution has the requested power.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CalibrationError
from .series import OUTBREAK, SurveillanceSeries, covariate_matrix

DEFAULT_LENGTH = 624


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    phi: float
    length_T: int = DEFAULT_LENGTH
    a00_range: tuple = (0.9, 1.0)
    a11_range: tuple = (0.4, 0.6)

    def __post_init__(self):
        if self.phi < 1:
            raise ValueError(f"scenario {self.id}: phi must be >= 1")


# (beta0, beta1, beta2, beta3, phi)
_TABLE = {
    1: (0.1, 0.0, 0.6, 0.6, 1.5),
    2: (0.1, 0.0025, 0.6, 0.6, 1.5),
    3: (-2.0, 0.0, 0.1, 0.3, 2.0),
    4: (-2.0, 0.005, 0.1, 0.3, 2.0),
    5: (1.5, 0.0, 0.2, -0.4, 1.0),
    6: (1.5, 0.003, 0.2, -0.4, 1.0),
    7: (0.5, 0.0, 0.5, 0.5, 5.0),
    8: (0.5, 0.002, 0.5, 0.5, 5.0),
    9: (2.5, 0.0, 1.0, 0.1, 3.0),
    10: (2.5, 0.001, 1.0, 0.1, 3.0),
    11: (3.75, 0.0, 0.1, -0.1, 1.1),
    12: (3.75, 0.001, 0.1, -0.1, 1.1),
    13: (5.0, 0.0, 0.05, 0.01, 1.2),
    14: (5.0, 0.0001, 0.05, 0.01, 1.2),
}

SCENARIOS = {i: ScenarioSpec(i, *row) for i, row in _TABLE.items()}


def get_scenario(scenario_id: int) -> ScenarioSpec:
    try:
        return SCENARIOS[int(scenario_id)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown scenario {scenario_id!r}; valid ids are 1..14") from None


def endemic_mean(spec: ScenarioSpec, t):
    z = covariate_matrix(np.atleast_1d(t))
    mu = np.exp(spec.beta0 + z @ np.array([spec.beta1, spec.beta2, spec.beta3]))
    return float(mu[0]) if np.ndim(t) == 0 else mu


def count_distribution(mu, phi: float):
    """Frozen scipy distribution with mean ``mu`` and variance ``phi * mu``."""
    if phi == 1:
        return stats.poisson(mu)
    return stats.nbinom(np.asarray(mu) / (phi - 1.0), 1.0 / phi)


def alarm_threshold(dist, alpha: float):
    """Smallest integer ``k`` with ``P(X >= k) < alpha`` (vectorized)."""
    k = np.atleast_1d(dist.ppf(1.0 - alpha)).astype(np.float64)
    k = np.maximum(k, 0.0)
    # ppf inverts the cdf with ">=", the tail condition is strict; step to the exact boundary
    for _ in range(64):
        up = dist.sf(k - 1) >= alpha
        if not up.any():
            break
        k = k + up
    for _ in range(64):
        down = (k > 0) & (dist.sf(k - 2) < alpha)
        if not down.any():
            break
        k = k - down
    return k.astype(np.int64)


def _calibrate(endemic_mu, phi, target_power, alpha):
    mu = np.atleast_1d(np.asarray(endemic_mu, dtype=np.float64))
    c = alarm_threshold(count_distribution(mu, phi), alpha)

    def power(m):
        return count_distribution(m, phi).sf(c - 1)

    lo, hi = mu.copy(), 1e4 * mu
    p_lo, p_hi = power(lo), power(hi)
    bad = ~((p_lo <= target_power) & (p_hi >= target_power))
    if bad.any():
        i = int(np.argmax(bad))
        raise CalibrationError(
            f"cannot bracket power {target_power} for endemic mean {mu[i]:.6g} "
            f"(phi={phi}, threshold={c[i]}, power at bounds {p_lo[i]:.4g}..{p_hi[i]:.4g})"
        )
    while np.any((hi - lo) > 1e-6 * hi):
        mid = 0.5 * (lo + hi)
        above = power(mid) >= target_power
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return 0.5 * (lo + hi), c


def calibrate_outbreak_mean(endemic_mu: float, phi: float, target_power: float = 0.5,
                            alpha: float = 0.01) -> float:
    """Outbreak mean at which the endemic alarm threshold is hit with ``target_power``."""
    if not endemic_mu > 0:
        raise ValueError("endemic_mu must be positive")
    if phi < 1:
        raise ValueError("phi must be >= 1")
    if not 0 < alpha < target_power < 1:
        raise ValueError("need 0 < alpha < target_power < 1")
    mu_out, _ = _calibrate(endemic_mu, phi, target_power, alpha)
    return float(mu_out[0])


@functools.lru_cache(maxsize=64)
def scenario_means(spec: ScenarioSpec, target_power: float = 0.5, alpha: float = 0.01):
    """Endemic and calibrated outbreak means for weeks 1..T (read-only arrays)."""
    t = np.arange(1, spec.length_T + 1)
    endemic = endemic_mean(spec, t)
    outbreak, _ = _calibrate(endemic, spec.phi, target_power, alpha)
    endemic.setflags(write=False)
    outbreak.setflags(write=False)
    return endemic, outbreak


def derive_seed(root_seed: int, scenario_id: int, index: int) -> int:
    """Independent 64-bit seed for series ``index`` of a scenario.

    Hashes ``(root_seed, scenario_id, index)`` through numpy's SeedSequence,
    so sub-streams are stable across machines and worker counts.
    """
    ss = np.random.SeedSequence([int(root_seed), int(scenario_id), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class SimulatedSeries:
    series: SurveillanceSeries
    a00: float
    a11: float
    endemic_mu: np.ndarray
    outbreak_mu: np.ndarray
    seed: int

    @property
    def excess(self) -> np.ndarray:
        """Cases above the expected endemic level, per week."""
        return self.series.counts - self.endemic_mu


def markov_labels(u: np.ndarray, a00: float, a11: float) -> np.ndarray:
    """Two-state chain from uniforms; starts endemic, ``u[0]`` unused."""
    out = np.zeros(u.size, dtype=np.int8)
    state = 0
    leave0, stay1 = 1.0 - a00, a11
    for t in range(1, u.size):
        state = int(u[t] < stay1) if state else int(u[t] < leave0)
        out[t] = state
    return out


def simulate_series(spec: ScenarioSpec, seed: int, series_id: str | None = None,
                    start_week: str = "2000-W01") -> SimulatedSeries:
    rng = np.random.Generator(np.random.PCG64(seed))
    a00 = float(rng.uniform(*spec.a00_range))
    a11 = float(rng.uniform(*spec.a11_range))
    labels = markov_labels(rng.random(spec.length_T), a00, a11)
    endemic, outbreak = scenario_means(spec)
    mu = np.where(labels == OUTBREAK, outbreak, endemic)
    if spec.phi == 1:
        counts = rng.poisson(mu)
    else:
        counts = rng.negative_binomial(mu / (spec.phi - 1.0), 1.0 / spec.phi)
    sid = series_id if series_id is not None else f"sc{spec.id:02d}_{seed % 10**8:08d}"
    ser = SurveillanceSeries(sid, counts, labels, start_week, 1)
    return SimulatedSeries(ser, a00, a11, endemic, outbreak, int(seed))


def simulate_scenario(spec: ScenarioSpec, n_series: int, root_seed: int,
                      start_week: str = "2000-W01") -> list[SimulatedSeries]:
    return [
        simulate_series(spec, derive_seed(root_seed, spec.id, i),
                        f"sc{spec.id:02d}_{i + 1:04d}", start_week)
        for i in range(n_series)
    ]


def stationary_outbreak_share(a00: float, a11: float) -> float:
    return (1.0 - a00) / ((1.0 - a00) + (1.0 - a11))


def null_power(endemic_mu: float, phi: float, alpha: float = 0.01) -> float:
    """Exact false-alarm rate of the threshold test under the endemic law."""
    d = count_distribution(endemic_mu, phi)
    c = alarm_threshold(d, alpha)[0]
    return float(d.sf(c - 1))


__all__ = [
    "SCENARIOS", "ScenarioSpec", "SimulatedSeries", "alarm_threshold",
    "calibrate_outbreak_mean", "count_distribution", "derive_seed", "endemic_mean",
    "get_scenario", "markov_labels", "null_power", "scenario_means", "simulate_scenario",
    "simulate_series", "stationary_outbreak_share",
]
