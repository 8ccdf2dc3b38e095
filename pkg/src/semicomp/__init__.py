"""Separable pathway effects for semi-competing risks in the illness-death model."""

__version__ = "0.1.0"

from .data import Dataset, StepFunction, SubjectRecord, ValidationReport, load_dataset, save_dataset, validate
from .eif import EifEstimate, NuisanceSet, eif_estimate, eif_variance, fit_nuisances, robustness_probe
from .errors import (ConfigurationError, DegenerateTestError, DesignError, InfeasibleError, PositivityError,
                     SchemaError, SemicompError, TruncationError, UsageError, ValidationError)
from .hazards import (CumulativeHazard, Hazard3, HazardSet, TransitionProcesses, build_processes, fit_hazards,
                      hazard3_mixture, nelson_aalen)
from .incidence import (IncidenceResult, SpeResult, confidence_interval, estimate_incidences, fit_incidence,
                        incidence_curves, spe_decomposition, variance_markov, variance_semimarkov, wald_interval)
from .inference import TestResult, logrank_transition_test, sensitivity_sweep, spe_test_u, u_statistic
from .propensity import PropensityModel, arm_weights, fit_logistic, ipw_weights, propensity_scores, true_model
from .simulate import (HazardSpec, SimulationConfig, assign_treatment, draw_covariates, draw_event_times,
                       oracle_incidence, setting_hazards, simulate_setting, split_seeds)
from .study import StudyConfig, StudyReport, run_study

__all__ = [name for name in dir() if not name.startswith("_")]
