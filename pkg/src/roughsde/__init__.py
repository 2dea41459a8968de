"""Modified Euler scheme for rough SDEs driven by fractional Brownian motion,
with discrete rough-path diagnostics and Monte Carlo rate experiments."""

from .errors import (
    CapabilityError,
    ConfigError,
    DivergenceError,
    DomainError,
    ExperimentError,
    GenerationError,
    IllConditionedError,
    NumericError,
    RegressionError,
    RoughSDEError,
)
from .fbm_gen import (
    FbmPath,
    UniformGrid,
    cov,
    rect_cov,
    refine_subsample,
    sample_fbm,
    sample_increments,
)
from .greedy import classify_counts, greedy_sequence, m_products
from .harness import ExperimentConfig, RateReport, q_scaling, regress_rate, strong_error, weak_error
from .roughpath import (
    ControlTable,
    Level2Path,
    chen_defect,
    control_omega,
    davie_remainder,
    level2_diagonal,
    level2_fine_approx,
    p_variation,
    q_process,
)
from .schemes import (
    contract_dvv,
    euler_step,
    exact_linear_solution,
    interpolate,
    run_modified_euler,
    solve_gamma_lambda,
)
from .sewing import sewing_constant, verify_sewing, weighted_sum_J
from .vectorfields import REGISTRY, VectorFieldSpec, get_field

__version__ = "0.1.0"
