"""Arm damping frequency and ratio from pointing trajectories via LPC and a
mass-spring-damper model, plus the correlation and stress-classification
analyses built on them."""

__version__ = "0.1.0"

from .classify import (
    FeatureMatrix,
    MinMaxNormalizer,
    SMOClassifier,
    cross_validate,
    min_max_fit_apply,
    run_experiment,
    svm_train,
)
from .lpc import (
    DampingEstimate,
    LpcDampingTransformer,
    LpcModel,
    autocorrelation,
    estimate_lpc,
    extract_damping,
    levinson_durbin,
    lpc_poles,
)
from .msd import (
    FitOptions,
    MsdCanonicalParams,
    MsdFit,
    MsdPhysicalParams,
    MsdStepRegressor,
    fit_pem,
    gof,
    is_outlier,
    physical_to_canonical,
    simulate_step_response,
)
from .stats import condition_summary, ks_normality, paired_t_test, spearman, threshold_sweep
from .synth import GroundTruth, SynthConfig, export, generate
from .trajectory import (
    ButterworthSmoother,
    TrialMeta,
    TrialSet,
    Trajectory,
    load_trials,
    smooth,
    truncate_window,
)
