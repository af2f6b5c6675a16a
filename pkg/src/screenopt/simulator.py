"""Monte Carlo simulation of the exact screen.

Every replicate draws from its own random stream, derived from the master
seed and the replicate index, so estimates are bit-identical whatever the
number of worker threads.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats

from . import kernels
from .fluorescence import FluorescenceModel
from .moments import ScreenConfig, poisson_target_fraction

SeedLike = Union[int, np.random.Generator]

_CHUNK = 64


@dataclass
class SimResult:
    counts: np.ndarray
    discovered: bool
    w1: int


@dataclass(frozen=True)
class EstimateCI:
    estimate: float
    ci_low: float
    ci_high: float
    replicates: int
    successes: int = 0

    @property
    def se(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1 - p) / self.replicates)


def replicate_rng(seed: int, index: int, stream: tuple = ()) -> np.random.Generator:
    """Independent stream number ``index`` under master ``seed``.

    ``stream`` namespaces independent batches (e.g. points of a curve) that
    share a master seed.
    """
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=tuple(stream) + (index,)))


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def default_workers() -> int:
    env = os.environ.get("SCREENOPT_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("SCREENOPT_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def discovered(counts, v: int):
    """Whether the target (column 0) strictly beats the ``v``-th largest other count.

    Ties are failures.  Works on one count vector or on a stack of them.
    """
    counts = np.asarray(counts)
    others = counts[..., 1:]
    k = others.shape[-1] - v
    vth = np.partition(others, k, axis=-1)[..., k]
    return counts[..., 0] > vth


@functools.lru_cache(maxsize=64)
def _ztp_cdf(lam: float) -> np.ndarray:
    kmax = int(max(30, lam + 40 * math.sqrt(lam) + 40))
    k = np.arange(1, kmax + 1)
    pmf = stats.poisson.pmf(k, lam) / -math.expm1(-lam)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    cdf.setflags(write=False)
    return cdf


def _survivals(fl, a):
    return float(fl.g1.sf(a)), float(fl.g2.sf(a))


def _multinomial_draw(config, fl, alpha, beta, rng):
    r, n = config.r, config.n
    per_type = rng.multinomial(n, np.full(r, 1.0 / r))
    s1, s2 = _survivals(fl, alpha)
    p = np.full(r, s2)
    p[0] = s1
    selected = rng.binomial(per_type, p)
    if beta is None:
        return selected, int(selected[0])
    b1, b2 = _survivals(fl, beta)
    q = np.full(r, b2)
    q[0] = b1
    # survivors of W ancestors with L descendants each are Bin(W*L, q)
    return rng.binomial(selected * config.L, q), int(selected[0])


def _poisson_draw(config, fl, alpha, beta, rng):
    r, n = config.r, config.n
    sizes = kernels.ztp_sizes(rng.random(n), _ztp_cdf(config.lam))
    types = rng.integers(0, r, size=int(sizes.sum()), dtype=np.int64)
    is_target = kernels.target_flags(sizes, types)
    s1, s2 = _survivals(fl, alpha)
    selected = rng.random(n) < np.where(is_target, s1, s2)
    w1 = int(np.count_nonzero(selected & is_target))
    if beta is None:
        weights = selected.astype(np.int64)
    else:
        b1, b2 = _survivals(fl, beta)
        weights = np.zeros(n, dtype=np.int64)
        weights[selected] = rng.binomial(config.L, np.where(is_target[selected], b1, b2))
    return kernels.weighted_type_counts(sizes, types, weights, r), w1


def _draw(config, fl, alpha, beta, rng):
    if config.model == "multinomial":
        return _multinomial_draw(config, fl, alpha, beta, rng)
    return _poisson_draw(config, fl, alpha, beta, rng)


def simulate_single_stage(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                          seed: SeedLike) -> SimResult:
    """One replicate of a single-sort screen."""
    counts, w1 = _draw(config, fl, alpha, None, _as_rng(seed))
    return SimResult(counts, bool(discovered(counts, config.v)), w1)


def simulate_two_stage(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                       beta: float, seed: SeedLike) -> SimResult:
    """One replicate of a two-sort screen with ``config.L`` descendants per selected cell.

    ``w1`` counts target cells passing the first sort.
    """
    counts, w1 = _draw(config, fl, alpha, beta, _as_rng(seed))
    return SimResult(counts, bool(discovered(counts, config.v)), w1)


def simulate_counts(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                    beta: Optional[float] = None, *, replicates: int, seed: int,
                    stream: tuple = (), workers: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Count vectors and first-stage target counts for ``replicates`` replicates.

    Returns ``(counts, w1)`` with shapes ``(replicates, r)`` and ``(replicates,)``.
    Replicate ``i`` always uses ``replicate_rng(seed, i, stream)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    counts = np.empty((replicates, config.r), dtype=np.int64)
    w1 = np.empty(replicates, dtype=np.int64)

    def run(start):
        for i in range(start, min(start + _CHUNK, replicates)):
            counts[i], w1[i] = _draw(config, fl, alpha, beta, replicate_rng(seed, i, stream))

    starts = range(0, replicates, _CHUNK)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or replicates <= _CHUNK:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return counts, w1


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=level,
                                                         method="wilson")
    return float(ci.low), float(ci.high)


def estimate_pdisc(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                   beta: Optional[float] = None, *, replicates: int = 10_000,
                   seed: int = 0, stream: tuple = (),
                   workers: Optional[int] = None) -> EstimateCI:
    """Monte Carlo estimate of the discovery probability with a 95% Wilson interval."""
    counts, _ = simulate_counts(config, fl, alpha, beta, replicates=replicates, seed=seed,
                                stream=stream, workers=workers)
    k = int(np.count_nonzero(discovered(counts, config.v)))
    lo, hi = wilson_interval(k, replicates)
    p = k / replicates
    return EstimateCI(p, min(lo, p), max(hi, p), replicates, k)


def sample_w1(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
              seed: SeedLike) -> int:
    """Draw the number of target cells passing the first sort."""
    rng = _as_rng(seed)
    s1 = float(fl.g1.sf(alpha))
    if config.model == "multinomial":
        q = s1 / config.r
    else:
        q = poisson_target_fraction(config.lam, config.r) * s1
    return int(rng.binomial(config.n, q))
