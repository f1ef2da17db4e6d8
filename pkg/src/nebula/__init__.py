"""Integrative binary genetic risk classification from GWAS summary statistics.

NEBULA scores a subject with an empirical Bayes posterior ratio whose prior
over per-SNP (control frequency, case frequency, auxiliary noncentrality) is
a grid NPMLE fitted by EM.  PRS baselines, a GWAS simulator and genotype
preprocessing live alongside it.
"""

from .classifiers import (
    CovariateModel,
    DiseaseModel,
    ScoreReport,
    adaptive_prs_score,
    covariate_loglr,
    fit_covariate_model,
    fit_log_odds,
    nebula_annotated_score,
    nebula_score,
    oracle_score,
    prs_score,
    select_threshold_cv,
)
from .densities import log_binom_pmf, log_noncentral_chisq_pdf, log_sum_exp
from .errors import ConfigError, DomainError, FitError, ResourceError
from .npmle import (
    AuxSummary,
    FitReport,
    Grid,
    MixingDistribution,
    TargetSufficientStats,
    build_grid,
    em_step,
    fit_npmle,
    fit_npmle_bivariate,
    marginal_log_likelihood,
    precompute_log_likelihood_tensor,
)
from .simulate import SimulationConfig, StudyRealization, realize_study

__version__ = "0.1.0"
