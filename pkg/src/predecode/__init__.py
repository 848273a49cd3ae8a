"""Mismatched decoding with a pre-processing function: achievable rates,
error exponents, upper bounds and Monte Carlo validation for small DMCs."""
from .bounds import (
    ExponentCurve,
    GammaInstance,
    SuperpositionConfig,
    error_exponent,
    superposition_best,
    superposition_rate,
    upper_bound,
)
from .core import (
    InfeasibleError,
    PreconditionError,
    PredecodeError,
    ResourceLimitError,
    ValidationError,
    channel_capacity,
    compose_channel,
    entropy,
    kl_divergence,
    log_metric,
    mutual_information,
)
from .lm import LmSolution, SimplexSearch, lm_oracle, lm_rate, lm_rate_max_input
from .metric_analysis import (
    binary_mismatch_capacity,
    binary_pre_capacity,
    is_useless,
    is_useless_for_channel,
    optimal_channel_binary_input,
    witness_channel,
)
from .preprocessing import (
    PreOptReport,
    PreProcessor,
    convexity_witness,
    r_pre_lm,
    r_pre_lm_budgeted,
    r_pre_lm_sampled,
)
from .simulate import (
    Codebook,
    SimResult,
    build_decode_and_process,
    random_cc_codebook,
    simulate,
    simulate_random_coding,
    simulate_vectorwise,
)

__version__ = "0.1.0"
