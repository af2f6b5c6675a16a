"""Design FACS thresholds for pooled RNAi screens.

Compute, approximate and maximize the probability that the target gene ends
up among the top-``v`` construct counts, for single- and two-stage sorts.
"""

from .approx import (ApproxResult, CurvePoint, DiscoveryCurve, NormalApprox,
                     approximate_discovery, approx_curve, log_order_stat_cdf,
                     normalize_counts, order_stat_cdf, pdisc_approx, pdisc_approx_two_stage)
from .fluorescence import (FluorescenceModel, LogNormal, Normal, mixture_survival,
                           percentile_to_threshold, quantile, survival, upper_quantile)
from .kernels import BACKEND
from .moments import (CellMoments, ScreenConfig, UnsupportedModelError, cell_moments,
                      descendants_for_capacity, expected_selected, expected_w1,
                      multinomial_cell_probs, multinomial_moments, poisson_moments,
                      poisson_target_fraction, two_stage_moments)
from .optimizer import (GridSpec, InfeasibleConstraintError, OptimizationResult,
                        SelectionEmptyError, golden_max, max_alpha_for_w1, optimize_alpha,
                        optimize_beta, optimize_two_stage)
from .simulator import (EstimateCI, SimResult, discovered, estimate_pdisc, sample_w1,
                        simulate_counts, simulate_single_stage, simulate_two_stage,
                        wilson_interval)

__version__ = "0.1.0"
