"""Eigenvalue-informed NeuralODE training toolkit.

Trains hybrid NeuralODEs whose loss functions evaluate the spectrum of the
system matrix along the solution, enforcing stability, oscillation
capability, frequency, damping and stiffness next to the usual
solution-fit loss. Built from: a dense complex linear-algebra core, a
shifted-QR eigen solver with analytic sensitivities, an adaptive Tsit5
integrator with discrete forward sensitivities, the property-loss suite,
an Adam trainer with multi-gradient strategies, and a config-driven
experiment runner.
"""

from .eigen import ConvergenceError, EigenResult, eigen, eigen2x2_closed_form, from_interleaved, to_interleaved
from .eigen_grad import DegeneracyError, EigenForwardSensitivity, FMatrix, eigen_forward, eigen_reverse, f_matrix
from .linalg import DimensionError, SingularMatrixError, hadamard, matmul, solve
from .losses import (
    DEFAULT_SCALINGS,
    LOSS_ORDER,
    AlignmentError,
    EigenTrajectory,
    LossEvaluation,
    LossSpec,
    PairSet,
    ReferenceData,
    build_pairs,
    eigen_trajectory,
    loss_dmp,
    loss_frq,
    loss_osc,
    loss_sol,
    loss_stb,
    loss_stf,
    loss_vector_and_jacobian,
    track_eigenvalues,
)
from .network import (
    DenseLayer,
    DenseNetwork,
    HybridRHS,
    DEFAULT_LAYER_SPEC,
    flatten_params,
    glorot_init,
    load_params,
    rhs_eval,
    rhs_param_jvp,
    save_params,
    system_matrix,
    with_params,
    zero_network,
)
from .solver import (
    LinearOscillator,
    OdeSolution,
    SolvabilityError,
    SolverConfig,
    StepBudgetError,
    VanDerPol,
    ground_truth_solve,
    sensitivity_solve_count,
    reset_sensitivity_solve_count,
    solve as solve_ode,
)
from .training import (
    AdamState,
    GradientStrategy,
    TrainResult,
    TrainingAbortedError,
    TrainingLog,
    TrainingProblem,
    TrainingRecord,
    adam_step,
    train,
)

__version__ = "0.1.0"
