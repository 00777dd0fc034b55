"""Continuous regularized Wasserstein barycenters from sample access."""

from .baselines import (
    DiscreteMeasure,
    GaussianParams,
    duality_gap,
    empirical_w2,
    gaussian_fixed_point,
    matrix_sqrt_psd,
    sinkhorn,
)
from .dual_solver import PotentialSpec, SolverConfig, solve
from .evaluation import covariance_error, gaussian_mle_fit, mean_error, w2_curve
from .measures import (
    Annulus,
    Box,
    CenteringRecord,
    Ellipse,
    Empirical,
    Gaussian,
    GaussianMixture,
    RasterShape,
    SupportMeasure,
    UniformBox,
    center_inputs,
    estimate_bounding_box,
    load_csv,
)
from .recovery import (
    BarycenterSampleSet,
    TransportPlanHandle,
    barycentric_projection,
    fit_monge_net,
    gradient_map,
    make_plans,
    marginal_grid,
    mcmc_sample,
    pushforward_barycenter,
)
from .regularization import ENTROPIC, QUADRATIC, RegularizerSpec, plan_density

__version__ = "0.1.0"

__all__ = [
    "Annulus",
    "BarycenterSampleSet",
    "Box",
    "CenteringRecord",
    "DiscreteMeasure",
    "Ellipse",
    "Empirical",
    "ENTROPIC",
    "Gaussian",
    "GaussianMixture",
    "GaussianParams",
    "PotentialSpec",
    "QUADRATIC",
    "RasterShape",
    "RegularizerSpec",
    "SolverConfig",
    "SupportMeasure",
    "TransportPlanHandle",
    "UniformBox",
    "barycentric_projection",
    "center_inputs",
    "covariance_error",
    "duality_gap",
    "empirical_w2",
    "estimate_bounding_box",
    "fit_monge_net",
    "gaussian_fixed_point",
    "gaussian_mle_fit",
    "gradient_map",
    "load_csv",
    "make_plans",
    "marginal_grid",
    "matrix_sqrt_psd",
    "mcmc_sample",
    "mean_error",
    "plan_density",
    "pushforward_barycenter",
    "sinkhorn",
    "solve",
    "w2_curve",
]
