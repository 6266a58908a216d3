"""Engine-to-engine transfer calibration for a GP engine-out NOx surrogate.

Train an exact Gaussian-process surrogate on nominal-engine data, infer
per-engine sensor and output biases with adaptive-tolerance rejection
sampling under a Kolmogorov-Smirnov distance, and emit posterior-predictive
NOx ensembles with credible bands. A built-in synthetic multi-engine
generator provides ground truth for validation.
"""

from .data import (
    ChannelSchema,
    ChannelSpec,
    EngineDataset,
    SelectionMatrix,
    WindowedInputs,
    apply_bias,
    load_dataset,
    save_dataset,
    slice_calibration_window,
    window_inputs,
)
from .gp import (
    GpModel,
    RbfHyperparams,
    TrainConfig,
    fit_surrogate,
    kernel,
    load_model,
    log_marginal_likelihood,
    predict_median,
    predict_normalized,
    save_model,
    train,
)
from .inference import (
    AbcConfig,
    BiasParameters,
    EvaluationReport,
    PosteriorSampleSet,
    PredictiveEnsemble,
    PriorSpec,
    calibrate,
    evaluate,
    main_phase,
    pilot_phase,
    posterior_predictive,
    simulate_trajectory,
)
from .stats import Ecdf, abs_error_percentiles, cumulative_series, ks_statistic, quantile, rmse
from .synth import SynthConfig, generate_nominal, generate_sample_engine, response_surface
from .transform import QuantileTransform, TransformSet, fit_transform_set

__version__ = "0.1.0"
