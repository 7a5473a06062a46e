"""Deep partial least squares for instrumental-variable regression.

The pipeline: project instruments and covariates onto a small set of
covariance-maximizing directions (PLS), refine the treatment prediction
with a shallow ReLU network trained by SGD on top of the frozen
projection, then recover policy coefficients from a censoring-recentered
outcome by linear GMM with a robust sandwich variance. A control-function
second stage, an asymptotic-normal posterior sampler, two synthetic data
designs, and a replicated benchmark harness round out the library; the
`dpls-iv` command line exposes simulate / fit / benchmark / predict.
"""
from .bench import KNOWN_METHODS, ExperimentConfig, MetricsReport, run_benchmark
from .data import (
    AugmentedInstruments,
    Dataset,
    SeededRng,
    augment_instruments,
    split_dataset,
    split_indices,
)
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateDataError,
    NumericalError,
    SingularDesignError,
)
from .ivreg import (
    ControlFunctionFit,
    DplsIvFit,
    PosteriorDraws,
    TobitConstants,
    TobitGmmFit,
    control_function_fit,
    corrected_covariance,
    dpls_iv_fit,
    estimate_tobit_constants,
    gmm_beta,
    identity_constants,
    recenter_outcome,
    sample_posterior,
    sandwich_variance,
)
from .linear import LinearFit, fit_lasso, fit_ols, fit_ridge, soft_threshold
from .metrics import AbsBiasSummary, abs_bias_summary, r_squared, rmse
from .network import (
    ActivationKind,
    DplsConfig,
    DplsModel,
    SgdParams,
    activation_apply,
    dpls_fit,
    load_model,
    model_from_dict,
    model_to_dict,
    network_loss_and_grads,
    save_model,
    sgd_refine,
)
from .pls import (
    KrylovBasis,
    PlsFit,
    compute_krylov,
    fit_pls_closed_form,
    fit_pls_deflation,
    select_q_cv,
)
from .statnum import (
    CovPair,
    sample_cov_pair,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .synthetic import (
    InstrumentGraph,
    SyntheticSpec,
    SyntheticTruth,
    distance_to_cov,
    experiment1_spec,
    experiment2_spec,
    gen_experiment1,
    gen_experiment2,
    gen_preferential_attachment,
    shortest_path_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ActivationKind",
    "AbsBiasSummary",
    "AugmentedInstruments",
    "ControlFunctionFit",
    "ConvergenceError",
    "CovPair",
    "DataError",
    "Dataset",
    "DegenerateDataError",
    "DplsConfig",
    "DplsIvFit",
    "DplsModel",
    "ExperimentConfig",
    "InstrumentGraph",
    "KNOWN_METHODS",
    "KrylovBasis",
    "LinearFit",
    "MetricsReport",
    "NumericalError",
    "PlsFit",
    "PosteriorDraws",
    "SeededRng",
    "SgdParams",
    "SingularDesignError",
    "SyntheticSpec",
    "SyntheticTruth",
    "TobitConstants",
    "TobitGmmFit",
    "abs_bias_summary",
    "activation_apply",
    "augment_instruments",
    "compute_krylov",
    "control_function_fit",
    "corrected_covariance",
    "distance_to_cov",
    "dpls_fit",
    "dpls_iv_fit",
    "estimate_tobit_constants",
    "experiment1_spec",
    "experiment2_spec",
    "fit_lasso",
    "fit_ols",
    "fit_pls_closed_form",
    "fit_pls_deflation",
    "fit_ridge",
    "gen_experiment1",
    "gen_experiment2",
    "gen_preferential_attachment",
    "gmm_beta",
    "identity_constants",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "network_loss_and_grads",
    "r_squared",
    "recenter_outcome",
    "rmse",
    "run_benchmark",
    "sample_cov_pair",
    "sample_posterior",
    "sandwich_variance",
    "save_model",
    "select_q_cv",
    "sgd_refine",
    "shortest_path_matrix",
    "soft_threshold",
    "split_dataset",
    "split_indices",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
]
