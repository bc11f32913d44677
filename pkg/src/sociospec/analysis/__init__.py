"""Meta-regression and 2-D projection diagnostics."""

from .projection import (Projection2D, cluster_purity, joint_affinities,  # noqa: F401
                         sample_projection_inputs, save_projection_csv,
                         save_projection_svg, tsne)
from .regression import (ABLATIONS, DESIGN_FACTORS, RegressionResult,  # noqa: F401
                         ablate, build_design, fit_ols, ols, regression_report,
                         select_features)
