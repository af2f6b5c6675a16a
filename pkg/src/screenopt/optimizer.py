"""Threshold optimization.

Single stage: maximize the approximate discovery probability over alpha.
Two stage: fix alpha at the largest value that still leaves enough target
cells after the first sort, then maximize over beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy import stats

from .approx import CurvePoint, DiscoveryCurve, approximate_discovery
from .fluorescence import FluorescenceModel, upper_quantile
from .moments import ScreenConfig, poisson_target_fraction
from .simulator import estimate_pdisc

INV_PHI = (math.sqrt(5) - 1) / 2

# objective values closer than this count as ties (quadrature noise is ~1e-12)
TIE_TOL = 1e-9


class SelectionEmptyError(RuntimeError):
    """Every candidate threshold leaves the sorted population empty."""


class InfeasibleConstraintError(ValueError):
    """No threshold satisfies the W1 budget constraint."""


@dataclass(frozen=True)
class GridSpec:
    """Coarse grid for the initial search; ``None`` bounds use the default bracket."""

    lo: Optional[float] = None
    hi: Optional[float] = None
    points: int = 61
    tol: float = 1e-4

    def __post_init__(self):
        if self.points < 3:
            raise ValueError("grid needs at least 3 points")
        if self.lo is not None and self.hi is not None and not self.lo < self.hi:
            raise ValueError("grid lo must be below hi")


@dataclass
class OptimizationResult:
    alpha_star: float
    value: float
    curve: DiscoveryCurve
    beta_star: Optional[float] = None
    constraint_active: bool = False
    evaluations: int = 0
    no_signal: bool = False
    refined_by_simulation: bool = False
    trace: list = field(default_factory=list)


def default_bracket(fl: FluorescenceModel) -> tuple[float, float]:
    return upper_quantile(fl, "nontarget", 0.999), upper_quantile(fl, "target", 1e-4)


def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-4,
               max_iter: int = 200):
    """Golden-section search for a maximum of ``f`` on ``[lo, hi]``.

    Returns ``(x, f(x), trace)`` where ``trace`` lists every evaluation.
    """
    trace = []

    def g(x):
        y = f(x)
        trace.append((x, y))
        return y

    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = g(d)
    x, y = (c, fc) if fc >= fd else (d, fd)
    return x, y, trace


def _grid_then_golden(objective, lo, hi, grid: GridSpec):
    xs = np.linspace(lo, hi, grid.points)
    results = [objective(x) for x in xs]
    vals = np.array([v for v, _ in results])
    degen = np.array([d for _, d in results])
    if degen.all():
        raise SelectionEmptyError("selection always empty on the search grid")
    best = vals.max()
    i = int(np.flatnonzero(vals >= best - TIE_TOL)[0])
    pts = [CurvePoint(float(x), float(v), "approx", degenerate=bool(d))
           for x, v, d in zip(xs, vals, degen)]
    x_star, v_star = float(xs[i]), float(vals[i])
    trace = [(float(x), float(v)) for x, v in zip(xs, vals)]
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    xg, vg, gtrace = golden_max(lambda x: objective(x)[0], a, b, tol=grid.tol)
    trace += gtrace
    if vg > v_star + TIE_TOL:
        x_star, v_star = float(xg), float(vg)
    return x_star, v_star, DiscoveryCurve(pts), trace


def optimize_alpha(config: ScreenConfig, fl: FluorescenceModel,
                   grid: GridSpec = GridSpec(), *, refine_replicates: int = 0,
                   seed: int = 0) -> OptimizationResult:
    """Single-stage threshold maximizing the approximate discovery probability.

    Ties go to the smallest threshold.  With ``refine_replicates > 0`` the best
    three candidates are re-scored by simulation and the winner returned.
    """
    dlo, dhi = default_bracket(fl)
    lo = dlo if grid.lo is None else grid.lo
    hi = dhi if grid.hi is None else grid.hi

    def objective(a):
        res = approximate_discovery(config, fl, a)
        return res.value, res.degenerate

    x, v, curve, trace = _grid_then_golden(objective, lo, hi, grid)
    assert v >= curve.probabilities.max() - TIE_TOL
    result = OptimizationResult(alpha_star=x, value=v, curve=curve, evaluations=len(trace),
                                trace=trace, no_signal=fl.identical)
    if refine_replicates > 0:
        cands = sorted(trace, key=lambda t: -t[1])
        top = []
        for a, _ in cands:
            if all(abs(a - b) > grid.tol for b in top):
                top.append(a)
            if len(top) == 3:
                break
        sims = [(estimate_pdisc(config, fl, a, replicates=refine_replicates, seed=seed)
                 .estimate, a) for a in top]
        best_sim, best_a = max(sims, key=lambda s: (s[0], -s[1]))
        result.alpha_star = best_a
        result.value = approximate_discovery(config, fl, best_a).value
        result.refined_by_simulation = True
    return result


def max_alpha_for_w1(config: ScreenConfig, fl: FluorescenceModel, b: float,
                     mode: Literal["expectation", "probability"] = "expectation",
                     epsilon: float = 0.05, tol: float = 1e-6) -> float:
    """Largest first-sort threshold keeping enough target cells.

    ``expectation``: E(W1) >= b, solved in closed form.  ``probability``:
    P(W1 >= b) >= 1 - epsilon with the exact binomial tail, by bisection.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    if config.model == "multinomial":
        frac = 1.0 / config.r
    else:
        frac = poisson_target_fraction(config.lam, config.r)
    if mode == "expectation":
        need = b / (config.n * frac)
        if need >= 1.0:
            raise InfeasibleConstraintError(
                f"E(W1) cannot reach b={b}: at most {config.n * frac:.6g} target cells")
        return upper_quantile(fl, "target", need)
    if mode != "probability":
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    k = math.ceil(b)

    def ok(a):
        q = frac * float(fl.g1.sf(a))
        return stats.binom.sf(k - 1, config.n, q) >= 1.0 - epsilon

    if stats.binom.sf(k - 1, config.n, frac) < 1.0 - epsilon:
        raise InfeasibleConstraintError(
            f"P(W1 >= {b}) < 1 - {epsilon} even when every cell is selected")
    lo = upper_quantile(fl, "target", 1.0 - 1e-12)
    while not ok(lo):
        lo -= 10 * fl.g1.transformed().sd
    hi = upper_quantile(fl, "target", min(0.5, b / (config.n * frac)))
    while ok(hi):
        hi += fl.g1.transformed().sd
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def optimize_beta(config: ScreenConfig, fl: FluorescenceModel, alpha_star: float,
                  grid: GridSpec = GridSpec(), *, replicates: int = 2000,
                  seed: int = 0) -> OptimizationResult:
    """Second-sort threshold maximizing discovery at a fixed first-sort threshold.

    The multinomial model uses the normal approximation; the Poisson model
    has no closed-form two-stage moments, so each beta is scored by
    simulation with ``replicates`` replicates on a common seed.
    """
    dlo, dhi = default_bracket(fl)
    lo = dlo if grid.lo is None else grid.lo
    hi = dhi if grid.hi is None else grid.hi

    if config.model == "multinomial":
        def objective(bt):
            res = approximate_discovery(config, fl, alpha_star, bt)
            return res.value, res.degenerate
    else:
        def objective(bt):
            est = estimate_pdisc(config, fl, alpha_star, bt, replicates=replicates, seed=seed)
            return est.estimate, est.successes == 0 and float(fl.g1.sf(bt)) == 0.0

    x, v, curve, trace = _grid_then_golden(objective, lo, hi, grid)
    assert v >= curve.probabilities.max() - TIE_TOL
    return OptimizationResult(alpha_star=alpha_star, beta_star=x, value=v, curve=curve,
                              evaluations=len(trace), trace=trace, constraint_active=True,
                              no_signal=fl.identical)


def optimize_two_stage(config: ScreenConfig, fl: FluorescenceModel, b: float,
                       grid: GridSpec = GridSpec(), *, mode="expectation", epsilon=0.05,
                       replicates: int = 2000, seed: int = 0) -> OptimizationResult:
    alpha = max_alpha_for_w1(config, fl, b, mode=mode, epsilon=epsilon)
    return optimize_beta(config, fl, alpha, grid, replicates=replicates, seed=seed)
