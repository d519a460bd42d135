"""Sensitivity values for matched-pair observational studies.

Computes Rosenbaum-type sensitivity values from signed score statistics,
their asymptotic laws under a given alternative, power and design
calculators, and multi-outcome screening.
"""

from .asymptotics import (
    AltModel,
    AsymptoticLaw,
    asymptotic_law,
    g_function,
    kappa_law_asymptotic,
    kappa_law_finite,
    mu_F,
    power,
    sigma_F_simulated,
    wilcoxon_law,
)
from .design import (
    SplitSpec,
    SubgroupSpec,
    binary_score_grid,
    choose_score,
    critical_sample_size,
    split_minimum_sample,
    split_rates,
)
from .exceptions import (
    BracketError,
    BudgetError,
    DegenerateSampleError,
    DomainError,
    IntegrationError,
    ParseError,
    RegistryError,
    SensvalError,
    SizeError,
    ValidationError,
)
from .numerics import Rng
from .scores import PairDiffs, RawPairs, ScoreSpec, ScoreVector, differences, psi_norms, score_vector
from .screening import OutcomeMatrix, histogram_bins, load_matrix, qq_data, screen
from .senscore import (
    GammaBound,
    Method,
    SensResult,
    Tail,
    kappa_star_closed,
    kappa_star_search,
    pvalue_bounds_exact,
    pvalue_bounds_mc,
    pvalue_bounds_normal,
    sensitivity_table,
    sensitivity_value,
    statistic,
    two_sided,
)
from .sim import SimJob, power_check, run_job

__version__ = "0.1.0"
