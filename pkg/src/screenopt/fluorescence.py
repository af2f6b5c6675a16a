"""Fluorescence distributions of target and non-target cells.

A :class:`FluorescenceModel` holds the two CDFs ``G1`` (target cells) and
``G2`` (non-target cells).  Everything downstream only needs survival
probabilities at a threshold, quantiles for bracketing, and the population
mixture used to translate a "top t fraction" gate into a fixed threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy import optimize, special

Which = Literal["target", "nontarget"]


@dataclass(frozen=True)
class Normal:
    """Location-scale normal fluorescence law."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ValueError(f"sd must be positive and finite, got {self.sd!r}")
        if not math.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean!r}")

    def _z(self, a):
        return (np.asarray(a, dtype=float) - self.mean) / self.sd

    def cdf(self, a):
        return _scalar(special.ndtr(self._z(a)))

    def sf(self, a):
        return _scalar(special.ndtr(-self._z(a)))

    def logsf(self, a):
        return _scalar(special.log_ndtr(-self._z(a)))

    def pdf(self, a):
        z = self._z(a)
        return _scalar(np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi)))

    def ppf(self, p):
        return _scalar(self.mean + self.sd * special.ndtri(np.asarray(p, dtype=float)))

    def isf(self, p):
        return _scalar(self.mean - self.sd * special.ndtri(np.asarray(p, dtype=float)))

    def transformed(self):
        """Return the normal law on the internal (ordinal) scale."""
        return self


@dataclass(frozen=True)
class LogNormal:
    """Log-normal law, evaluated through the normal law of ``log(F)``.

    Thresholds stay on the raw fluorescence scale; ``a <= 0`` lies below the
    support.
    """

    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "_normal", Normal(self.mu, self.sigma))

    @staticmethod
    def _log(a):
        a = np.asarray(a, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), -np.inf)

    def cdf(self, a):
        return self._normal.cdf(self._log(a))

    def sf(self, a):
        return self._normal.sf(self._log(a))

    def logsf(self, a):
        return self._normal.logsf(self._log(a))

    def pdf(self, a):
        a = np.asarray(a, dtype=float)
        x = self._log(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(a > 0, self._normal.pdf(x) / np.where(a > 0, a, 1.0), 0.0)
        return _scalar(out)

    def ppf(self, p):
        return _scalar(np.exp(self._normal.ppf(p)))

    def isf(self, p):
        return _scalar(np.exp(self._normal.isf(p)))

    def transformed(self):
        return self._normal


Distribution = Union[Normal, LogNormal]


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class FluorescenceModel:
    """Pair of fluorescence laws: ``g1`` for target cells, ``g2`` otherwise.

    The target law must stochastically dominate the non-target one
    (``G1(a) <= G2(a)`` everywhere); pass ``check_order=False`` to skip the
    check, e.g. when exploring a deliberately inverted design.
    """

    g1: Distribution
    g2: Distribution
    check_order: bool = True

    def __post_init__(self):
        if type(self.g1) is not type(self.g2):
            raise TypeError("g1 and g2 must belong to the same family")
        if self.check_order and not self.is_ordered():
            raise ValueError("target law G1 must stochastically dominate G2")

    @classmethod
    def normal(cls, target_mean=0.4, nontarget_mean=0.0, target_sd=1.0,
               nontarget_sd=1.0, **kw) -> "FluorescenceModel":
        return cls(Normal(target_mean, target_sd), Normal(nontarget_mean, nontarget_sd), **kw)

    @classmethod
    def lognormal(cls, target_mu, nontarget_mu, target_sigma=1.0,
                  nontarget_sigma=1.0, **kw) -> "FluorescenceModel":
        return cls(LogNormal(target_mu, target_sigma),
                   LogNormal(nontarget_mu, nontarget_sigma), **kw)

    def law(self, which: Which) -> Distribution:
        if which == "target":
            return self.g1
        if which == "nontarget":
            return self.g2
        raise ValueError(f"which must be 'target' or 'nontarget', got {which!r}")

    @property
    def identical(self) -> bool:
        return self.g1 == self.g2

    def is_ordered(self) -> bool:
        n1, n2 = self.g1.transformed(), self.g2.transformed()
        if n1.sd == n2.sd:
            return n1.mean >= n2.mean
        lo = min(n1.mean - 12 * n1.sd, n2.mean - 12 * n2.sd)
        hi = max(n1.mean + 12 * n1.sd, n2.mean + 12 * n2.sd)
        grid = np.linspace(lo, hi, 2001)
        return bool(np.all(n1.cdf(grid) <= n2.cdf(grid) + 1e-12))


def survival(model: FluorescenceModel, which: Which, a):
    """Probability that a cell of the given kind fluoresces above ``a``."""
    return model.law(which).sf(a)


def log_survival(model: FluorescenceModel, which: Which, a):
    return model.law(which).logsf(a)


def quantile(model: FluorescenceModel, which: Which, p: float) -> float:
    """Threshold below which a fraction ``p`` of cells of the given kind fall."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    return float(model.law(which).ppf(p))


def upper_quantile(model: FluorescenceModel, which: Which, q: float) -> float:
    """Threshold with survival exactly ``q``; accurate for tiny ``q``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q!r}")
    return float(model.law(which).isf(q))


def mixture_survival(model: FluorescenceModel, p_target: float, a):
    return p_target * model.g1.sf(a) + (1.0 - p_target) * model.g2.sf(a)


def percentile_to_threshold(model: FluorescenceModel, p_target: float, t: float) -> float:
    """Threshold that lets the top fraction ``t`` of the mixed population through.

    The population is ``p_target * G1 + (1 - p_target) * G2``.  The root is
    bracketed by the component quantiles and polished with Brent's method.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t!r}")
    if not 0.0 <= p_target <= 1.0:
        raise ValueError(f"p_target must lie in [0, 1], got {p_target!r}")
    if p_target == 0.0:
        return upper_quantile(model, "nontarget", t)
    if p_target == 1.0:
        return upper_quantile(model, "target", t)
    a1 = upper_quantile(model, "target", t)
    a2 = upper_quantile(model, "nontarget", t)
    lo, hi = min(a1, a2), max(a1, a2)
    if lo == hi:
        return lo

    def f(a):
        return mixture_survival(model, p_target, a) - t

    return float(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                                 maxiter=200))
