"""Bayesian optimization without a rigid bounding box.

Two mechanisms let the search region grow past the user's initial guess:
periodic volume doubling of the box (EI-V), and regularized expected
improvement via coercive non-stationary GP prior means (EI-Q, EI-H).
"""

from .acquisition import (
    AcquisitionContext,
    BoundedMode,
    ExplorationFallbackWarning,
    UnboundedMode,
    acquisition_value,
    acquisition_values,
    duality_gap,
    expected_improvement,
    improvement_target,
    maximize,
    min_improvement_target,
)
from .box import Box, expand_box, latin_hypercube
from .harness import ExperimentConfig, Summary, load_trace, report, run_experiment, write_trace
from .problems import (
    ExternalCommandError,
    NoisyProblem,
    Problem,
    external_command,
    gaussian_modes,
    hartmann3,
    hartmann3_problem,
    hartmann6,
    hartmann6_problem,
    random_small_box,
)
from .strategy import METHODS, EvaluationError, StrategyConfig, Trace, TraceRecord, incumbent, run
from .surrogate import (
    Dataset,
    DegradedSamplingWarning,
    GpModel,
    HyperParams,
    HyperPrior,
    IllConditionedModelError,
    PriorMean,
    eval_prior_mean,
    fit,
    log_marginal_likelihood,
    posterior,
    posterior_many,
    se_kernel,
    slice_sample_hyperparams,
)

__version__ = "0.1.0"
