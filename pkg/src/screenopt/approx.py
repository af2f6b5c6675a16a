"""Normal approximation to the probability of discovery.

The construct counts are replaced by independent normals with matching means
and variances.  The target is discovered when its surrogate count beats the
``v``-th largest of the ``r - 1`` non-target surrogates, so

    p_disc ~= integral of F_[v](Phi_2(x)) * phi_1(x) dx

where ``F_[v]`` is the CDF of that order statistic expressed through the
non-target CDF value ``Phi_2(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .fluorescence import FluorescenceModel
from .moments import CellMoments, ScreenConfig, cell_moments, two_stage_moments

# tails beyond this many target sds hold < 1e-20 of phi_1's mass
_HALF_WIDTH_SDS = 10.0


def order_stat_cdf(x_prob, r: int, v: int):
    """CDF of the ``v``-th largest of ``r - 1`` iid draws, given their CDF value.

    Equals ``sum_{j=r-v}^{r-1} C(r-1, j) x^j (1-x)^(r-1-j)``, i.e. the upper
    tail ``P(Bin(r-1, x) >= r-v)``, evaluated as the regularized incomplete
    beta function ``I_x(r - v, v)``.
    """
    if not 1 <= v <= r - 1:
        raise ValueError(f"v must lie in [1, r-1], got v={v}, r={r}")
    x = np.clip(np.asarray(x_prob, dtype=float), 0.0, 1.0)
    out = special.betainc(r - v, v, x)
    return float(out) if out.ndim == 0 else out


def log_order_stat_cdf(x_prob, r: int, v: int):
    """Natural log of :func:`order_stat_cdf`, finite wherever the CDF is positive.

    ``betainc`` keeps full relative precision down to the smallest normal
    double; below that the leading binomial term dominates and is used in log
    form.
    """
    x = np.clip(np.asarray(x_prob, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        direct = np.log(special.betainc(r - v, v, x))
        k = r - v
        lead = (special.gammaln(r) - special.gammaln(k + 1) - special.gammaln(v)
                + k * np.log(x) + (v - 1) * np.log1p(-x))
    out = np.where(np.isfinite(direct) | (x == 0), direct, lead)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NormalApprox:
    """Independent normal surrogates for the target and a non-target count."""

    mean_target: float
    sd_target: float
    mean_other: float
    sd_other: float

    @property
    def degenerate(self) -> bool:
        return not (self.sd_target > 0 and self.sd_other > 0)

    @classmethod
    def from_moments(cls, n: int, m: CellMoments) -> "NormalApprox":
        return cls(
            mean_target=n * m.mean_target,
            sd_target=math.sqrt(max(n * m.var_target, 0.0)),
            mean_other=n * m.mean_other,
            sd_other=math.sqrt(max(n * m.var_other, 0.0)),
        )


@dataclass(frozen=True)
class ApproxResult:
    value: float
    degenerate: bool
    normal: NormalApprox
    abserr: float = 0.0


def discovery_integral(na: NormalApprox, r: int, v: int, epsabs: float = 1e-10) -> ApproxResult:
    """Integrate the order-statistic CDF against the target surrogate's density."""
    if na.degenerate:
        return ApproxResult(0.0, True, na)
    mu1, s1, mu2, s2 = na.mean_target, na.sd_target, na.mean_other, na.sd_other

    # substitute x = mu1 + s1*z so phi_1 becomes the standard normal density
    def integrand(z):
        x = mu1 + s1 * z
        return order_stat_cdf(special.ndtr((x - mu2) / s2), r, v) * math.exp(-0.5 * z * z)

    lo, hi = -_HALF_WIDTH_SDS, _HALF_WIDTH_SDS
    # the order-statistic CDF switches on near mu2 (scale s2); tell quad where
    breaks = sorted({min(max((mu2 + k * s2 - mu1) / s1, lo), hi) for k in (-4.0, 0.0, 4.0)}
                    - {lo, hi})
    val, err = integrate.quad(integrand, lo, hi, points=breaks or None, epsabs=epsabs,
                              epsrel=1e-12, limit=400)
    val /= math.sqrt(2 * math.pi)
    err /= math.sqrt(2 * math.pi)
    return ApproxResult(min(max(val, 0.0), 1.0), False, na, err)


def approximate_discovery(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                          beta: Optional[float] = None) -> ApproxResult:
    """Full result (value, degeneracy flag, surrogate parameters) of the approximation.

    With ``beta`` given the two-stage moments are used.
    """
    if beta is None:
        m = cell_moments(config, fl, alpha)
    else:
        m = two_stage_moments(config, fl, alpha, beta)
    na = NormalApprox.from_moments(config.n, m)
    return discovery_integral(na, config.r, config.v)


def pdisc_approx(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> float:
    return approximate_discovery(config, fl, alpha).value


def pdisc_approx_two_stage(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                           beta: float) -> float:
    return approximate_discovery(config, fl, alpha, beta).value


def normalize_counts(counts, config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                     beta: Optional[float] = None) -> np.ndarray:
    """Centre and scale construct counts by their exact means and sds.

    ``counts`` has the target gene first; the last axis indexes genes, so a
    ``(replicates, r)`` array is normalized row by row.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.shape[-1] != config.r:
        raise ValueError(f"expected {config.r} counts on the last axis, got {counts.shape[-1]}")
    m = cell_moments(config, fl, alpha) if beta is None else two_stage_moments(
        config, fl, alpha, beta)
    n = config.n
    if m.var_target <= 0 or m.var_other <= 0:
        raise ZeroDivisionError("count variance is zero; counts cannot be normalized")
    mean = np.full(config.r, n * m.mean_other)
    sd = np.full(config.r, math.sqrt(n * m.var_other))
    mean[0] = n * m.mean_target
    sd[0] = math.sqrt(n * m.var_target)
    return (counts - mean) / sd


@dataclass
class CurvePoint:
    threshold: float
    probability: float
    kind: Literal["approx", "simulated"] = "approx"
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    degenerate: bool = False


@dataclass
class DiscoveryCurve:
    """Discovery probability against a threshold (alpha, or beta in stage two)."""

    points: list[CurvePoint] = field(default_factory=list)

    def __post_init__(self):
        th = [p.threshold for p in self.points]
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("curve thresholds must be strictly increasing")

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p.threshold for p in self.points])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p.probability for p in self.points])

    def argmax(self) -> CurvePoint:
        return max(self.points, key=lambda p: p.probability)


def approx_curve(config: ScreenConfig, fl: FluorescenceModel, thresholds: Sequence[float],
                 alpha: Optional[float] = None) -> DiscoveryCurve:
    """Approximate curve over ``thresholds``.

    With ``alpha`` given the thresholds are second-stage ``beta`` values at
    that fixed first-stage threshold.
    """
    pts = []
    for t in thresholds:
        res = (approximate_discovery(config, fl, t) if alpha is None
               else approximate_discovery(config, fl, alpha, t))
        pts.append(CurvePoint(float(t), res.value, "approx", degenerate=res.degenerate))
    return DiscoveryCurve(pts)
