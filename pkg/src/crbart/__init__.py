"""Bayesian additive regression trees for discrete-time competing risks."""

from .crisk import (
    CifCurve,
    CriskFitM1,
    CriskFitM2,
    FactorFitError,
    cif,
    conditional_quantile,
    curves,
    fit_m1,
    fit_m2,
    individual_differences,
    partial_dependence,
    pd_difference,
    survival,
    varsel_probabilities,
)
from .discrete import (
    Cohort,
    CompetingRisksRecord,
    TimeGrid,
    build_time_grid,
    coarsen_grid,
    expand_crisk_m1,
    expand_crisk_m2,
    expand_survival,
    quantile_grid,
)
from .evaluation import MetricTable, aalen_johansen, lin_ccc, run_replicates
from .io import load_model, parse_cohort_csv, save_model
from .probit import BinaryDataset, fit_probit, predict_prob
from .sampler import ForestDraws, McmcConfig, fit_continuous
from .simgen import SCENARIO_ROWS, ScenarioConfig, TrueCif, gen_friedman, generate, scenario_row
from .trees import DartPrior, Ensemble, SplitRule, Tree, TreePrior

__version__ = "0.1.0"
