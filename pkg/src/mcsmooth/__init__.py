"""Multicomponent-objective smoothing for sparse, irregular time series.

The estimator fits a canonical stochastic oscillator to scattered
observations by staged gradient ascent on a weighted sum of point-wise,
distributional, model-coherence, and parameter-flex log-likelihoods. An
ultradian glucose-insulin ODE simulator is included as a synthetic data
source.
"""

from .gradients import GradientBundle, PolarSingularityError, fd_check, grad_total
from .kernels import KernelTables, bandwidth_rule_of_thumb, build_tables, gaussian_kernel
from .objective import (
    Components,
    EstimationState,
    WeightSchedule,
    eval_components,
    eval_L1,
    eval_L2,
    eval_L3_L4,
    eval_Lparams,
    eval_total,
)
from .optimizer import (
    EstimationResult,
    FrequencyEstimationError,
    HyperConfig,
    StageTrace,
    StalledError,
    density_estimate,
    estimate,
    initialize,
    reconstruct_trajectory,
    run_stage,
)
from .oscillator import (
    EffectiveGaps,
    ModelNoise,
    ParamPriors,
    ParamTrajectory,
    PolarState,
    effective_gaps,
    param_transition_logpdf,
    propagate_mean,
    to_polar,
    transition_logpdfs,
)
from .timeseries import (
    KickSeries,
    MeasurementSpec,
    ObservationSeries,
    load_kicks,
    load_observations,
    subsample,
    write_observations,
)
from .ultradian import (
    BlowUpError,
    NutritionSchedule,
    SimulationResult,
    UltradianParams,
    UltradianState,
    default_initial_state,
    icu_fit_params,
    nominal_params,
    nutrition_rate,
    simulate,
    ultradian_rhs,
)

__version__ = "0.1.0"
