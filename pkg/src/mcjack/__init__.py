"""Monte-Carlo jackknife log-MSPE estimation for small-area predictors.

The package fits the classical area-level variance model, supports model
selection (BIC over candidate structures, and a chi-square test for the
presence of the area random effect), and estimates the log mean squared
prediction error of any deterministic prediction procedure, including
procedures that select a model internally, by a simulation-assisted
delete-one jackknife with bias correction.
"""

__version__ = "0.1.0"

from . import errors
from .model import (
    AreaDataset,
    Psi,
    SimulatedPair,
    StandardDraws,
    draw_standard,
    simulate_columns,
    simulate_pair,
    substream_seed,
)
from .estimation import (
    DhmUncertainty,
    FitMethod,
    ModelFit,
    analytic_mspe_A0,
    analytic_mspe_A0_all,
    dhm_uncertainty,
    eblup,
    eblup_all,
    fit_ml,
    gls_beta,
    pr_mspe,
    pr_mspe_all,
    prasad_rao_A,
    profile_loglik,
)
from .selection import (
    CandidateModel,
    SelectionOutcome,
    bic_score,
    chi_square_quantile,
    dhm_test,
    enumerate_candidates,
    select_bic,
)
from .procedures import (
    BicThenEblup,
    CustomProcedure,
    DhmThenPredict,
    DirectEstimator,
    PlainEblup,
    PredictionProcedure,
    SyntheticRegression,
    make_procedure,
)
from .jackknife import (
    JackknifeSet,
    McjackResult,
    TruncationConfig,
    empirical_true_log_mspe,
    empirical_true_log_mspe_all,
    jackknife_set,
    m_estimate,
    mc_log_mspe,
    mc_log_mspe_all,
    mcjack_estimate,
    truncate_log,
)
from .harness import (
    BoxplotSummary,
    RbTable,
    Scenario,
    boxplot_summary,
    percent_rb,
    preset_scenarios,
    run_scenario,
    selection_study_scenario,
    variance_test_scenario,
)
from .datasets import builtin_csv_text, builtin_table, hospital_dataset
from .ingest import AreaTable, build_dataset, build_design, ingest_csv, read_area_table

__all__ = [
    "__version__",
    "errors",
    # model
    "AreaDataset",
    "Psi",
    "SimulatedPair",
    "StandardDraws",
    "draw_standard",
    "simulate_columns",
    "simulate_pair",
    "substream_seed",
    # estimation
    "DhmUncertainty",
    "FitMethod",
    "ModelFit",
    "analytic_mspe_A0",
    "analytic_mspe_A0_all",
    "dhm_uncertainty",
    "eblup",
    "eblup_all",
    "fit_ml",
    "gls_beta",
    "pr_mspe",
    "pr_mspe_all",
    "prasad_rao_A",
    "profile_loglik",
    # selection
    "CandidateModel",
    "SelectionOutcome",
    "bic_score",
    "chi_square_quantile",
    "dhm_test",
    "enumerate_candidates",
    "select_bic",
    # procedures
    "BicThenEblup",
    "CustomProcedure",
    "DhmThenPredict",
    "DirectEstimator",
    "PlainEblup",
    "PredictionProcedure",
    "SyntheticRegression",
    "make_procedure",
    # jackknife
    "JackknifeSet",
    "McjackResult",
    "TruncationConfig",
    "empirical_true_log_mspe",
    "empirical_true_log_mspe_all",
    "jackknife_set",
    "m_estimate",
    "mc_log_mspe",
    "mc_log_mspe_all",
    "mcjack_estimate",
    "truncate_log",
    # harness
    "BoxplotSummary",
    "RbTable",
    "Scenario",
    "boxplot_summary",
    "percent_rb",
    "preset_scenarios",
    "run_scenario",
    "selection_study_scenario",
    "variance_test_scenario",
    # data / io
    "AreaTable",
    "build_dataset",
    "build_design",
    "builtin_csv_text",
    "builtin_table",
    "hospital_dataset",
    "ingest_csv",
    "read_area_table",
]
