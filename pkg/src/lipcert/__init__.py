"""Certified parameter-Lipschitz constants for dense and controlled-ODE nets.

The package computes upper bounds on the Lipschitz constants of the maps
theta -> N(theta, x) and theta -> grad N(theta, x) over a parameter ball,
checks them against empirical difference quotients, derives training step
sizes from them, and extends the same certificates to networks written as
controlled ODEs.
"""

__version__ = "0.1.0"

from .activations import (
    Activation,
    ActivationEnvelope,
    make_activation,
    saturated_linear,
    sigmoid,
    smoothed_relu,
    tanh,
)
from .bounds import (
    ArchitectureSpec,
    BoundInputs,
    Certificate,
    ClosedFormBounds,
    LayerBounds,
    LossEnvelope,
    NetworkBounds,
    RefinementSearch,
    SampleMoments,
    closed_form_bounds,
    closed_form_certificate,
    derive_adagrad_params,
    derive_gd_step,
    input_base,
    layer_step,
    loss_certificate,
    network_certificate,
    refine_over_layer_budgets,
)
from .code_net import (
    CodeCertificate,
    Control,
    FieldEnvelopes,
    Trajectory,
    VectorFieldSpec,
    code_certificate,
    code_loss_certificate,
    dnn_as_code,
    embed_input,
    linear_scalar_field,
    random_smooth_field,
    required_moment_order,
    solve_code,
    solve_first_variation,
    solve_second_variation,
    total_variation,
    verify_envelopes,
)
from .empirical import (
    LipschitzEstimate,
    WorstCasePair,
    chain_output,
    directed_affine_pair,
    empirical_grad_lipschitz,
    empirical_lipschitz,
    finite_diff_gradient,
    loss_gradient_map,
    network_jacobian_map,
    network_output_map,
    worst_case_construction,
)
from .network import (
    ForwardTrace,
    Params,
    PseudoHuber,
    Sample,
    SquaredError,
    dataset_norms,
    flatten_params,
    forward,
    grad_params,
    init_params,
    layer_slices,
    load_dataset_csv,
    load_params,
    loss_head_envelopes,
    param_jacobian,
    param_norm,
    project_to_ball,
    sample_in_ball,
    save_params,
    unflatten_params,
)
from .training import (
    NetworkObjective,
    QuadraticObjective,
    TrainTrace,
    TrainerConfig,
    run_adagrad_norm,
    run_gd,
)

__all__ = [
    "Activation",
    "ActivationEnvelope",
    "ArchitectureSpec",
    "BoundInputs",
    "Certificate",
    "ClosedFormBounds",
    "CodeCertificate",
    "Control",
    "FieldEnvelopes",
    "ForwardTrace",
    "LayerBounds",
    "LipschitzEstimate",
    "LossEnvelope",
    "NetworkBounds",
    "NetworkObjective",
    "Params",
    "PseudoHuber",
    "QuadraticObjective",
    "RefinementSearch",
    "Sample",
    "SampleMoments",
    "SquaredError",
    "TrainTrace",
    "TrainerConfig",
    "Trajectory",
    "VectorFieldSpec",
    "WorstCasePair",
    "chain_output",
    "closed_form_bounds",
    "closed_form_certificate",
    "code_certificate",
    "code_loss_certificate",
    "dataset_norms",
    "derive_adagrad_params",
    "derive_gd_step",
    "directed_affine_pair",
    "dnn_as_code",
    "embed_input",
    "empirical_grad_lipschitz",
    "empirical_lipschitz",
    "finite_diff_gradient",
    "flatten_params",
    "forward",
    "grad_params",
    "init_params",
    "layer_slices",
    "input_base",
    "layer_step",
    "linear_scalar_field",
    "load_dataset_csv",
    "load_params",
    "loss_certificate",
    "loss_gradient_map",
    "loss_head_envelopes",
    "make_activation",
    "network_certificate",
    "network_jacobian_map",
    "network_output_map",
    "param_jacobian",
    "param_norm",
    "project_to_ball",
    "random_smooth_field",
    "required_moment_order",
    "refine_over_layer_budgets",
    "run_adagrad_norm",
    "run_gd",
    "sample_in_ball",
    "save_params",
    "saturated_linear",
    "sigmoid",
    "smoothed_relu",
    "solve_code",
    "solve_first_variation",
    "solve_second_variation",
    "tanh",
    "total_variation",
    "unflatten_params",
    "verify_envelopes",
    "worst_case_construction",
]
