"""Supervised hidden Markov model outbreak detection for weekly case counts."""

from .baseline import BaselineFit, BaselineScore, baseline_score, fit_baseline
from .errors import (CalibrationError, DataError, EvaluationError, NumericalError,
                     OutbreakHmmError, TrainingError, UsageError)
from .evaluation import (EvalReport, Metrics, ScoredWeek, auc, build_report, match_sensitivity,
                         metrics_at, overlap_counts, roc_curve)
from .hmm import (HmmModel, PosteriorResult, estimate_transitions, forward_posterior,
                  model_from_dict, model_to_dict, train)
from .kernels import BACKEND
from .nbglm import GlmFit, PooledDesign, irls_fit, nb_log_pmf, predict_mu
from .series import (CovariateRow, SeriesGroup, SurveillanceSeries, build_covariates,
                     train_test_split)
from .simulator import (SCENARIOS, ScenarioSpec, SimulatedSeries, calibrate_outbreak_mean,
                        endemic_mean, simulate_series)

__version__ = "0.1.0"
