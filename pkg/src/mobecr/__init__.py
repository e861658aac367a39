"""Robust inference for Marshall-Olkin dependent competing risks under interval monitoring."""

from .asymptotics import (
    InfluenceVector,
    SandwichCovariance,
    influence_by_cell,
    influence_point,
    j_matrix,
    k_matrix,
    sandwich,
    wald_influence2,
    wald_influence2_by_cell,
)
from .design import CostModel, GaConfig, ParetoIndividual, nsga2_run, phi1_cost, phi2_precision
from .errors import (
    ClassificationError,
    DomainError,
    InvalidTuningError,
    MobeError,
    NullPointError,
    SingularityError,
)
from .estimation import (
    CountData,
    FitConfig,
    FitResult,
    dpd_gradient,
    dpd_objective,
    fit,
    fit_many,
    neg_log_likelihood,
)
from .inference import GofReport, WaldReport, gof_bootstrap_pvalue, gof_statistic, wald_power, wald_test
from .model import (
    BivariateObservation,
    CellTable,
    InspectionGrid,
    Theta,
    cell_table,
    classify_cell,
    mobe_joint_density,
    mobe_joint_survival,
)
from .simulation import ScenarioConfig, run_bias_study, run_power_study, sample_contaminated, sample_counts, sample_latent

__version__ = "0.1.0"
