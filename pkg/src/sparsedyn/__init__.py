"""sparsedyn: sparse estimation and deconvolution of dynamic signals."""

from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    RngSpec,
    SolverTrace,
    TimeSeries,
    best_s_approx,
    compressibility,
    support,
)
from .ar import (
    ArModel,
    covariate_matrix,
    lasso_ls,
    lasso_yw,
    least_squares,
    omp_generic,
    omp_ls,
    omp_yw,
    psd,
    sample_covariance,
    simulate_ar,
    spectral_spread,
    yule_walker,
)
from .glm import (
    SelfExcitingModel,
    SpikeTrain,
    fit_l1_ml,
    fit_ml,
    negloglik,
    negloglik_grad,
    pomp,
    rate_sequence,
    sep_psd,
    simulate_sep,
    stationary_rate,
)
from .fcss import (
    FcssResult,
    SmootherState,
    StateSpaceProblem,
    dynamic_cs_objective,
    fcss_solve,
    fixed_interval_smoother,
    prune_innovations,
    spindle_solve,
    update_theta,
)
from .fade import (
    DynDeconvProblem,
    GradientSplit,
    PoissonRecoveryProblem,
    adaptive_cap_solve,
    deconv_gradients,
    deconv_solve,
    kkt_gap,
    line_projection_matrix,
    multiplicative_solve,
    nls_solve,
    nmf_solve,
    poisson_gradients,
    poisson_solve,
)
from .gof import (
    GofReport,
    RescaledTimes,
    acf_test,
    ks_cvm_ad,
    rescaled_ks,
    residues,
    spectral_distance,
    time_rescale,
)

__version__ = "0.1.0"
