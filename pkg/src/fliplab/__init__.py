"""Monte Carlo laboratory for one-step gradient attacks on random nets.

Build random fully-connected networks with Gaussian weights, run the
normalized one-step sign attack against them, and measure how the
induced preactivation shift decomposes layer by layer.  The theory
module evaluates the matching non-asymptotic certificates so every
simulated claim can be checked against its predicted envelope.
"""

from .activations import (
    ActivationSpec,
    GrowthReport,
    MomentTable,
    eval_activation,
    eval_derivative,
    growth_check,
    make_activation,
    moment,
    moment_table,
    perturbed_product_moment,
)
from .attack import (
    AttackOutcome,
    StepRule,
    fgsm_step,
    perturbation_bound_multi_layer,
    perturbation_bound_two_layer,
    success_prob_limit_two_layer,
)
from .conditioning import (
    GradientDecomposition,
    LayerStats,
    ProjectionPair,
    ResampleOutput,
    TwoLayerCoefficients,
    conditional_resample,
    gradient_direction_decomposition,
    multilayer_layer_stats,
    two_layer_coefficients,
)
from .harness import (
    ExperimentConfig,
    SweepResult,
    TrialRecord,
    emit_csv,
    render_csv,
    run_experiment,
)
from .network import (
    EtaChain,
    ForwardTrace,
    NetworkParams,
    analytic_norm_limits,
    eta_chain,
    export_weights,
    forward,
    gradient,
    load_weights,
    network_from_weights,
    sample_network,
)
from .numerics import (
    QuadratureRule,
    RngStream,
    SummaryStats,
    derive_stream,
    gauss_hermite_expect,
    monte_carlo_expect,
    normality_check,
    sample_gaussian_matrix,
    summarize,
    wilson_interval,
)
from .theory import (
    CertificateReport,
    ConditionCheck,
    EmpiricalProcessEstimate,
    EnvelopeParameters,
    FailureEnvelope,
    SteinCheckResult,
    certificate_check,
    certified_envelope_parameters,
    certified_step_size,
    drift_moment_floor,
    empirical_process_sup,
    failure_envelope,
    minimal_certified_step,
    output_magnitude_bound,
    stein_check,
)

__version__ = "0.1.0"
