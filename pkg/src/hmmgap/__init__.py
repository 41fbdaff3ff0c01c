"""HMM filtering as random matrix products: stable forward/backward passes,
forgetting-rate (Lyapunov gap) estimation, buffer-length selection, and
buffered minibatch SGD maximum-likelihood inference."""

from .errors import InferenceDivergedError, ModelError, NumericalError
from .estimators import BufferedSgdHmm, ForgettingRateEstimator
from .filtering import (
    BackwardRun,
    FilterRun,
    backward_filter,
    buffered_backward,
    buffered_forward,
    forward_filter,
    forward_filter_stream,
    forward_step,
    smoothed_posterior,
)
from .inference import (
    GradientReport,
    ParamSelector,
    SgdConfig,
    SgdResult,
    d_emission,
    full_gradient,
    minibatch_gradient,
    sgd_infer,
    term_gradient,
)
from .lyapunov import (
    DecaySeries,
    GapEstimate,
    birkhoff_tau,
    buffer_length,
    emission_shift,
    estimate_gap,
    from_log_ratio,
    hilbert_metric,
    log_linear_slope,
    logratio_jacobian,
    logratio_map,
    pair_distance_matrix,
    qr_spectrum,
    to_log_ratio,
    trajectory_decay,
    trajectory_gap,
)
from .model import (
    HmmModel,
    emission_density,
    emission_matrix,
    is_primitive,
    load_model,
    log_emission_densities,
    marginal_density,
    save_model,
    stationary_distribution,
    validate,
)
from .sampling import SampleOutput, read_observations, sample_sequence, write_observations, write_states

__version__ = "0.1.0"
