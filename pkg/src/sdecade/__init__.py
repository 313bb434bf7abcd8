"""Structure-preserving sampling and validation of weight-diffusion models.

The package simulates Stratonovich weight dynamics on spheres and
orthogonal groups (exponential integrator) and for general drift /
diffusion fields (Stratonovich-Heun), realizes readout functionals by
weighted Monte Carlo, and validates the results three independent ways:
a 1-D Crank-Nicolson PDE solve, iterated Lie-bracket computations, and
paired-path cascade simulation checks.
"""

from .activations import (
    Activation,
    CUBIC_PLUS_ONE,
    IDENTITY,
    TANH,
    get_activation,
    register_activation,
    registered_names,
)
from .cascade_ode import (
    ActivationPath,
    realize_cascade_mc,
    solve_activation,
    write_activation_csv,
)
from .cascade_sim import (
    PairedPaths,
    SimulationReport,
    SimulationSetup,
    coordinate_fields,
    coordinate_jacobian,
    decode_jacobian,
    decode_state,
    pullback_drift,
    verify_simulation,
    write_report_csv,
)
from .config import ConfigError, ExperimentConfig, parse_config_text, serialize_config
from .fitting import (
    Dataset,
    FitDiverged,
    FitProblem,
    FitResult,
    fit_cdgd,
    fit_spsa,
    load_dataset_csv,
    neuron_dataset,
    uniform_sphere_inputs,
    write_dataset_csv,
)
from .fk_pde import (
    Coefficients1D,
    ConvergenceTable,
    FkSolution,
    Grid1D,
    convergence_study,
    solve_fk,
    solve_fk_slice,
    thomas_solve,
    write_slice_csv,
)
from .lie import (
    GeneratorCoeffs,
    MAX_BRACKET_DEPTH,
    NeuralField,
    SkewBasis,
    assemble_generators,
    commutator,
    iterated_ad,
    skew_basis,
    vf_bracket,
)
from .linalg import expm, expm_scaled, expm_skew3, expm_stack
from .realize import (
    LinearReadout,
    RealizationEstimate,
    ScalarNeuron,
    TwoBlockModel,
    TwoBlockReadout,
    VectorNeuron,
    constant_potential,
    estimate_from_terminals,
    network_estimate,
    realize_mc,
    reference_penalty,
    terminal_ensemble,
    write_estimates_csv,
)
from .rng import (
    DATASET_STREAM,
    OPTIMIZER_STREAM,
    PERTURB_STREAM,
    REFINE_STREAM,
    SeedRecord,
    as_seed,
    brownian_increments,
    refine_increments,
    substream,
)
from .sde import (
    GeneralSde,
    LinearSde,
    SdeModel,
    TimeGrid,
    WeightTrajectory,
    fk_weight,
    ito_correction,
    ito_drift_matrix,
    linear_step_matrices,
    linear_terminal_ensemble,
    log_fk_weight,
    read_trajectory_csv,
    sample_path_heun,
    sample_path_linear,
    write_trajectory_csv,
)

__version__ = "0.1.0"
