"""Separable direct-effect tests for recurrent events with a terminal event."""

__version__ = "0.1.0"

from .campaign import (
    CampaignResult, Scenario, additive_scenarios, crossing_scenarios, run_campaign,
    write_campaign,
)
from .comparators import MarginalTest, ghosh_lin_test, while_alive_test
from .data import (
    Dataset, RawRecord, SubjectHistory, TimeGrid, at_risk, cumulative_events, default_grid,
    discretize, to_records,
)
from .estimators import (
    DeathHazardModel, StepCurve, fit_death_hazard, ghosh_lin_mean, kaplan_meier,
    nelson_aalen_events, restricted_mean_survival, while_alive_curve, while_alive_loss,
)
from .exceptions import (
    ConvergenceError, DataIntegrityError, DegenerateVarianceError, InputError, NumericalError,
    RecurSepError, UndefinedEstimandError,
)
from .io import export_csv, ingest_csv, read_records
from .results import TestResult
from .separable import (
    CounterfactualMeanCurve, PRMSMaTest, WeightProcess, bootstrap_variance, compute_weights,
    counterfactual_mean_curve, estimating_equation, fit_pr_msm, fit_separable, plugin_variance,
    pr_msmat_test, score_statistic,
)
from .simulate import (
    ContinuousDGPConfig, DiscreteDGPConfig, generate_continuous, generate_discrete,
)
