"""Set-membership learning of unknown LTI dynamics with information-triggered
data selection, data-driven LMI controller synthesis, and a scenario-based
min-max learning predictive controller.

The package is organised in layers:

* :mod:`itl_lpc.linalg` -- dense symmetric linear-algebra primitives,
* :mod:`itl_lpc.system` -- the plant, disturbance generators and datasets,
* :mod:`itl_lpc.concentration` -- disturbance priors and matrix bounds,
* :mod:`itl_lpc.membership` -- the learned parametric uncertainty set,
* :mod:`itl_lpc.trigger` -- the information-triggered data selector,
* :mod:`itl_lpc.synthesis` -- LMI feasibility kernel and gain synthesis,
* :mod:`itl_lpc.mpc` -- the scenario-based min-max predictive controller,
* :mod:`itl_lpc.harness` -- experiment orchestration and metrics,
* :mod:`itl_lpc.cli` -- the ``itl-lpc`` command line front end.
"""

from itl_lpc.linalg import (
    cholesky_lower,
    generalized_min_eig,
    kron,
    pseudo_inverse,
    psd_project,
    sym_min_eig,
    vec,
)
from itl_lpc.system import (
    BoundedMatrix,
    CovarianceGaussian,
    DataMatrices,
    DataSample,
    Dataset,
    DiscreteSet,
    LtiSystem,
    assemble_matrices,
    random_system,
    sample_disturbance,
    step,
)
from itl_lpc.concentration import ConcentrationModel, DisturbanceBall, disturbance_ball, phi1
from itl_lpc.membership import (
    EllipsoidSet,
    QmiSet,
    VolumeProxy,
    build_psi,
    contains,
    ellipsoid_form,
    inclusion_test,
    least_squares_center,
    qii_estimate,
    sample_members,
    volume_proxy,
)
from itl_lpc.trigger import TriggerDecision, TriggerState, augmented_info_matrix, online_update, trigger_decision
from itl_lpc.synthesis import (
    AffineLmi,
    IscResult,
    StabilityCertificate,
    TerminalIngredients,
    check_terminal_lmi,
    delta2_estimate,
    delta_m_lower_bound,
    lipschitz_Vf,
    sdp_feasibility,
    synthesize_isc,
    terminal_cost,
    theta_f,
)
from itl_lpc.mpc import (
    MpcConfig,
    MpcSolution,
    PredictionMatrices,
    ScenarioSet,
    SpLmiBlocks,
    TightenedConstraints,
    build_sp_blocks,
    prediction_matrices,
    recursive_feasibility_probe,
    robust_invariant_set,
    sample_scenarios,
    scenario_count,
    solve_mpc,
    tighten,
)
from itl_lpc.harness import ExperimentConfig, RunRecord, metrics, run_closed_loop, stability_monitor, validate_membership

__version__ = "0.1.0"
