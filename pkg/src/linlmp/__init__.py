"""Linearized locational marginal pricing for active and reactive power.

Builds a loss-embedded linear LMP model on top of GSDF sensitivities,
solves it as a convex QP with exact duals, and decomposes every nodal
price into energy, congestion, voltage and loss components. A Newton
power-flow oracle and finite-difference price probes validate the
linearization and the duals.
"""

from .acpf import (
    AcBranchFlow,
    PfSolution,
    branch_flows_ac,
    bus_injections,
    case_dispatch,
    finite_diff_price,
    newton_pf,
)
from .engine import (
    SCENARIO_BOUNDS,
    DualSet,
    LmpModel,
    LmpPrices,
    LmpResult,
    LmpRun,
    ModelOptions,
    aea,
    assemble_model,
    decompose_lmp,
    extract_duals,
    iterate,
    solve_lmp,
)
from .errors import (
    CaseParseError,
    ConvergenceError,
    DualConsistencyError,
    LinLmpError,
    NetworkValidationError,
    QpInfeasibleError,
    QpIterationLimitError,
    QpUnboundedError,
    SingularSensitivityError,
)
from .losses import (
    LossState,
    build_loss_state,
    compute_fnd,
    compute_loss_factors,
    compute_losses,
    loss_diagnostics,
    net_injections,
    zero_loss_state,
)
from .network import (
    AdmittancePair,
    Branch,
    Bus,
    BusKind,
    Generator,
    Network,
    build_admittance,
    build_linear_admittance,
    format_network,
    load_case,
    merge_ratings,
    parse_case,
    parse_network,
    parse_ratings,
    scale_load,
    total_shunt_susceptance,
)
from .qpsolver import QpProblem, QpSolution, kkt_residual, solve_qp
from .sensitivity import (
    FlowVector,
    InjectionVector,
    SensitivityBundle,
    build_c_matrix,
    build_gsdf,
    build_sensitivity,
    build_x_matrix,
    eval_angles,
    eval_branch_flows,
    eval_voltages,
)

__version__ = "0.1.0"
