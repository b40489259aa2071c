"""Truncated Euler-Maruyama simulation of the delay Ait-Sahalia model with jumps."""

__version__ = "0.1.0"

from .engine import (
    Ensemble,
    GridSpec,
    SimPath,
    bem_step,
    coupled_paths,
    em_step,
    simulate_ensemble,
    simulate_path,
    tem_step,
)
from .model import (
    SIGMOID,
    TABLE1,
    TABLE2,
    InitialSegment,
    ModelParams,
    VolatilityFunction,
    constant_segment,
    constant_volatility,
    eval_diffusion,
    eval_drift,
    eval_jump,
    sigmoid_phi,
    validate_params,
)
from .noise import NoiseStream
from .truncation import (
    TruncationRule,
    clamp_bounds,
    default_mu,
    make_rule,
    truncated_diffusion,
    truncated_drift,
    verify_pi_admissibility,
)
