"""Cell-level moment kernels.

A single cell contributes ``M_{k,i}`` constructs of type ``i`` to the final
count ``X_i`` (``T_{k,i}`` in a two-stage screen).  Counts are sums of ``n``
iid cell contributions, so the cell moments below determine every mean and
variance used by the normal approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Optional

from .fluorescence import FluorescenceModel

Model = Literal["multinomial", "poisson"]


class UnsupportedModelError(ValueError):
    """Raised for model/stage combinations without a closed form."""


@dataclass(frozen=True)
class ScreenConfig:
    """Experiment parameters.

    Attributes
    ----------
    r : number of genes (construct types); gene 1 is the target.
    n : number of cells sorted in the (first) FACS stage.
    v : number of top-count genes sent to validation.
    model : ``"multinomial"`` (one construct per cell) or ``"poisson"``
        (zero-truncated Poisson construct count with mean parameter ``lam``).
    lam : multiplicity of infection, required for the Poisson model.
    L : descendants per selected cell in a two-stage screen.
    """

    r: int
    n: int
    v: int = 3
    model: Model = "multinomial"
    lam: Optional[float] = None
    L: int = 1

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 2:
            raise ValueError(f"r must be an integer >= 2, got {self.r!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n!r}")
        if int(self.v) != self.v or not 1 <= self.v <= self.r - 1:
            raise ValueError(f"v must be an integer in [1, r-1], got {self.v!r}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be an integer >= 1, got {self.L!r}")
        if self.model == "poisson":
            if self.lam is None or not (self.lam > 0 and math.isfinite(self.lam)):
                raise ValueError("poisson model requires a positive, finite lam")
        elif self.model == "multinomial":
            if self.lam is not None:
                raise ValueError("lam is only meaningful for the poisson model")
        else:
            raise ValueError(f"unknown insertion model {self.model!r}")
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "v", int(self.v))
        object.__setattr__(self, "L", int(self.L))

    def with_(self, **changes) -> "ScreenConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class CellMoments:
    """Moments of one cell's contribution to the target and to a non-target count.

    ``cov_target_other`` is Cov(M_1, M_i) and ``cov_other_other`` is
    Cov(M_i, M_j) for distinct non-target genes.  ``m3_*`` are raw third
    moments.
    """

    mean_target: float
    mean_other: float
    var_target: float
    var_other: float
    cov_target_other: float
    cov_other_other: float
    m3_target: float
    m3_other: float

    FIELDS = ("mean_target", "mean_other", "var_target", "var_other",
              "cov_target_other", "cov_other_other", "m3_target", "m3_other")

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


def _survivals(fl: FluorescenceModel, a: float) -> tuple[float, float]:
    return float(fl.g1.sf(a)), float(fl.g2.sf(a))


def multinomial_cell_probs(config: ScreenConfig, fl: FluorescenceModel, alpha: float):
    """Cell probabilities ``(p0, p1, p_other)`` of the multinomial count vector.

    ``p0`` is the chance a cell is not selected, ``p1`` that it is selected
    and carries the target construct, ``p_other`` the same for any single
    non-target gene.
    """
    if config.model != "multinomial":
        raise UnsupportedModelError("cell probabilities exist only for the multinomial model")
    r = config.r
    s1, s2 = _survivals(fl, alpha)
    p1 = s1 / r
    p_other = s2 / r
    # G(a) = 1 - sf(a); summing the cdfs directly keeps p0 accurate near 1
    p0 = float(fl.g1.cdf(alpha)) / r + (r - 1) * float(fl.g2.cdf(alpha)) / r
    return p0, p1, p_other


def _multinomial_from_survivals(r: int, s1: float, s2: float) -> CellMoments:
    p1, p2 = s1 / r, s2 / r
    return CellMoments(
        mean_target=p1,
        mean_other=p2,
        var_target=p1 * (1.0 - p1),
        var_other=p2 * (1.0 - p2),
        cov_target_other=-p1 * p2,
        cov_other_other=-p2 * p2,
        m3_target=p1,
        m3_other=p2,
    )


def multinomial_moments(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> CellMoments:
    if config.model != "multinomial":
        raise UnsupportedModelError(f"expected multinomial model, got {config.model!r}")
    return _multinomial_from_survivals(config.r, *_survivals(fl, alpha))


def poisson_target_fraction(lam: float, r: int) -> float:
    """P(a processed cell carries at least one target construct).

    ``(1 - exp(-lam/r)) / (1 - exp(-lam))``, computed with ``expm1`` so the
    ``lam -> 0`` limit ``1/r`` is reached without cancellation.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam!r}")
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r!r}")
    return math.expm1(-lam / r) / math.expm1(-lam)


def poisson_moments(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> CellMoments:
    """Cell moments under the zero-truncated Poisson insertion model."""
    if config.model != "poisson":
        raise UnsupportedModelError(f"expected poisson model, got {config.model!r}")
    lam, r = config.lam, config.r
    s1, s2 = _survivals(fl, alpha)
    q = lam / r
    not_empty = -math.expm1(-lam)  # 1 - e^{-lam}
    # P(no target construct) = e^{-lam/r}; written via expm1 for small q
    c1 = s1
    c2 = s2 + (s1 - s2) * (-math.expm1(-q))
    z = not_empty
    mean_t = q * c1 / z
    mean_o = q * c2 / z
    second = q + q * q
    third = q + 3 * q * q + q ** 3
    return CellMoments(
        mean_target=mean_t,
        mean_other=mean_o,
        var_target=c1 * second / z - mean_t ** 2,
        var_other=c2 * second / z - mean_o ** 2,
        cov_target_other=c1 * q * q / z - c1 * c2 * q * q / z ** 2,
        cov_other_other=c2 * q * q / z - c2 * c2 * q * q / z ** 2,
        m3_target=c1 * third / z,
        m3_other=c2 * third / z,
    )


def cell_moments(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> CellMoments:
    """Single-stage cell moments for whichever insertion model ``config`` uses."""
    if config.model == "multinomial":
        return multinomial_moments(config, fl, alpha)
    return poisson_moments(config, fl, alpha)


def _binomial_raw(L: int, p: float) -> tuple[float, float, float]:
    mean = L * p
    second = L * p * (1 - p) + mean * mean
    third = mean * (L * L * p * p - 3 * L * p * p + 2 * p * p + 3 * L * p - 3 * p + 1)
    return mean, second, third


def two_stage_moments(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                      beta: float) -> CellMoments:
    """Moments of one first-stage cell's contribution after the second sort.

    A selected ancestor carrying type ``i`` yields ``Bin(L, Gbar(beta))``
    surviving descendants; the moments are binomial raw moments weighted by
    the first-stage selection probability.
    """
    if config.model != "multinomial":
        raise UnsupportedModelError(
            "two-stage closed-form moments are available for the multinomial model only; "
            "use the simulator for the poisson model")
    r, L = config.r, config.L
    a1, a2 = _survivals(fl, alpha)
    b1, b2 = _survivals(fl, beta)
    w1, w2 = a1 / r, a2 / r
    mt, s2t, s3t = _binomial_raw(L, b1)
    mo, s2o, s3o = _binomial_raw(L, b2)
    mean_t, mean_o = w1 * mt, w2 * mo
    return CellMoments(
        mean_target=mean_t,
        mean_other=mean_o,
        var_target=w1 * s2t - mean_t ** 2,
        var_other=w2 * s2o - mean_o ** 2,
        cov_target_other=-mean_t * mean_o,
        cov_other_other=-mean_o * mean_o,
        m3_target=w1 * s3t,
        m3_other=w2 * s3o,
    )


def expected_selected(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> float:
    """Expected number of cells passing the first sort."""
    s1, s2 = _survivals(fl, alpha)
    if config.model == "multinomial":
        frac = 1.0 / config.r
    else:
        frac = poisson_target_fraction(config.lam, config.r)
    return config.n * (frac * s1 + (1.0 - frac) * s2)


def expected_w1(config: ScreenConfig, fl: FluorescenceModel, alpha: float) -> float:
    """Expected number of target cells passing the first sort."""
    s1 = float(fl.g1.sf(alpha))
    if config.model == "multinomial":
        return config.n * s1 / config.r
    return config.n * poisson_target_fraction(config.lam, config.r) * s1


def descendants_for_capacity(config: ScreenConfig, fl: FluorescenceModel, alpha: float,
                             capacity: float) -> int:
    """Descendants per selected cell so stage two processes about ``capacity`` cells."""
    sel = expected_selected(config, fl, alpha)
    if sel <= 0:
        raise ValueError("no cells are expected to pass the first sort")
    return max(1, int(round(capacity / sel)))
