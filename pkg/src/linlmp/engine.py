"""Pricing engine: model assembly, loss iteration, dual decomposition.

One pricing run builds the sensitivity bundle once, then alternates between
solving the quadratic dispatch model (with loss constants frozen) and
refreshing those constants from the optimal dispatch, until total active
loss settles. Prices come from the duals of the final solve, split into
energy, congestion, voltage and loss components per bus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DualConsistencyError,
    NetworkValidationError,
    QpError,
    QpInfeasibleError,
)
from .losses import LossState, build_loss_state, net_injections, zero_loss_state
from .network import AdmittancePair, Network, build_linear_admittance, scale_load
from .qpsolver import QpProblem, QpSolution, solve_qp
from .sensitivity import (
    FlowVector,
    SensitivityBundle,
    build_sensitivity,
    eval_branch_flows,
    eval_voltages,
)

SCENARIO_BOUNDS = {
    "loose": (0.90, 1.10),
    "normal": (0.95, 1.05),
    "tight": (0.97, 1.03),
}

# loss-iteration stabilizer: damping and secant-history depth of the
# accelerated update used once the plain iteration stops contracting
_STABILIZED_MIX = 0.6
_ANDERSON_DEPTH = 6
_ANDERSON_CLIP = 3.0


@dataclass(frozen=True)
class ModelOptions:
    """Knobs for one pricing run."""

    v_min_override: float | None = None
    v_max_override: float | None = None
    load_scale: float = 1.0
    loss_enabled: bool = True
    loss_tolerance: float = 1e-6
    max_iterations: int = 20
    qp_tolerance: float = 1e-8

    def __post_init__(self):
        if self.loss_tolerance <= 0.0:
            raise ValueError("loss_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class DualSet:
    """System prices and constraint multipliers of one solve."""

    lambda_p: float
    lambda_q: float
    mu: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class IterationRecord:
    p_loss: float
    q_loss: float
    objective: float


@dataclass(frozen=True)
class LmpPrices:
    """Per-bus price components. Totals are the exact sum of the four parts."""

    almp_total: np.ndarray
    almp_energy: np.ndarray
    almp_congestion: np.ndarray
    almp_voltage: np.ndarray
    almp_loss: np.ndarray
    rlmp_total: np.ndarray
    rlmp_energy: np.ndarray
    rlmp_congestion: np.ndarray
    rlmp_voltage: np.ndarray
    rlmp_loss: np.ndarray


@dataclass(frozen=True)
class LmpResult:
    prices: LmpPrices
    dispatch_p: np.ndarray
    dispatch_q: np.ndarray
    flows: FlowVector
    voltages: np.ndarray
    duals: DualSet
    trace: tuple[IterationRecord, ...]


@dataclass(frozen=True)
class LmpModel:
    """A QP instance plus the bookkeeping to map duals back to the network."""

    problem: QpProblem
    flow_branches: np.ndarray
    n_bus: int
    n_gen: int


@dataclass(frozen=True)
class LmpRun:
    """Everything a post-hoc probe needs: the scaled network, the frozen
    loss constants, the final model and its solution."""

    net: Network
    opts: ModelOptions
    adm: AdmittancePair
    bundle: SensitivityBundle
    loss: LossState
    model: LmpModel
    solution: QpSolution
    result: LmpResult


def voltage_bounds(net: Network, opts: ModelOptions) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus voltage bounds, file values unless uniformly overridden."""
    vmin = np.array([b.v_min for b in net.buses])
    vmax = np.array([b.v_max for b in net.buses])
    if opts.v_min_override is not None:
        vmin = np.full(net.n_bus, opts.v_min_override)
    if opts.v_max_override is not None:
        vmax = np.full(net.n_bus, opts.v_max_override)
    return vmin, vmax


def assemble_model(
    net: Network,
    bundle: SensitivityBundle,
    loss: LossState,
    opts: ModelOptions,
) -> LmpModel:
    """Build the dispatch QP for one iteration.

    Variables are the generator active then reactive outputs. The two power
    balances carry the frozen delivery factors and total losses; branch
    flows and bus voltages enter as range constraints over affine
    expressions of the generator variables, with fictional nodal demands
    folded into the constant terms as virtual loads.
    """
    gens = net.generators
    if not gens:
        raise NetworkValidationError("network has no generators to dispatch")
    n = net.n_bus
    n_gen = len(gens)
    gbus = net.gen_bus_indices()
    pd, qd = net.demand_vectors()

    quadratic = np.concatenate(
        [[g.cost_b for g in gens], [g.cost_c for g in gens]]
    )
    linear = np.concatenate([[g.cost_a for g in gens], np.zeros(n_gen)])

    # net injection of bus i, generation aside: -demand - fictional demand
    inj_const_p = -pd - loss.fnd_p
    inj_const_q = -qd - loss.fnd_q

    # Active balance: sum DF_p (G - D) + P_loss = 0. The +P_loss offset
    # corrects the delivery-factor double count (sum LF_p . P ~ 2 P_loss).
    # Reactive balance: sum DF_q (G - D) - Q_loss = -sum(b_jj). No double
    # count exists on this side (LF_q couples to the weak Q->P-flow path),
    # so the loss enters as extra demand; together with the FND terms in
    # the range constants this keeps the voltage rows' global reactive
    # balance exactly satisfiable.
    eq_rows = np.zeros((2, 2 * n_gen))
    eq_rows[0, :n_gen] = loss.df_p[gbus]
    eq_rows[1, n_gen:] = loss.df_q[gbus]
    eq_rhs = np.array(
        [
            loss.df_p @ pd - loss.p_loss_total,
            loss.df_q @ qd + loss.q_loss_total + loss.q_balance_constant,
        ]
    )

    limits = np.array(
        [br.flow_limit if br.flow_limit is not None else np.nan for br in net.branches]
    )
    flow_branches = np.flatnonzero(np.isfinite(limits))
    n_flow = flow_branches.size
    rows = np.zeros((n_flow + n, 2 * n_gen))
    lo = np.zeros(n_flow + n)
    hi = np.zeros(n_flow + n)
    if n_flow:
        rows[:n_flow, :n_gen] = bundle.gsdf_pp[flow_branches][:, gbus]
        rows[:n_flow, n_gen:] = bundle.gsdf_pq[flow_branches][:, gbus]
        const = (
            bundle.gsdf_pp[flow_branches] @ inj_const_p
            + bundle.gsdf_pq[flow_branches] @ inj_const_q
        )
        lo[:n_flow] = -limits[flow_branches] - const
        hi[:n_flow] = limits[flow_branches] - const

    x_vp = bundle.x_matrix[n:, :n]
    x_vq = bundle.x_matrix[n:, n:]
    rows[n_flow:, :n_gen] = x_vp[:, gbus]
    rows[n_flow:, n_gen:] = x_vq[:, gbus]
    v_const = x_vp @ inj_const_p + x_vq @ inj_const_q
    vmin, vmax = voltage_bounds(net, opts)
    lo[n_flow:] = vmin - v_const
    hi[n_flow:] = vmax - v_const

    lb = np.concatenate([[g.p_min for g in gens], [g.q_min for g in gens]])
    ub = np.concatenate([[g.p_max for g in gens], [g.q_max for g in gens]])

    problem = QpProblem(
        num_vars=2 * n_gen,
        quadratic_diag=quadratic,
        linear_cost=linear,
        eq_rows=eq_rows,
        eq_rhs=eq_rhs,
        range_rows=rows,
        range_lo=lo,
        range_hi=hi,
        lb=lb,
        ub=ub,
    )
    return LmpModel(problem=problem, flow_branches=flow_branches, n_bus=n, n_gen=n_gen)


def per_bus_dispatch(
    net: Network, solution: QpSolution, n_gen: int
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate generator outputs into per-bus totals."""
    gbus = net.gen_bus_indices()
    p = np.zeros(net.n_bus)
    q = np.zeros(net.n_bus)
    np.add.at(p, gbus, solution.primal[:n_gen])
    np.add.at(q, gbus, solution.primal[n_gen:])
    return p, q


def extract_duals(
    model: LmpModel,
    solution: QpSolution,
    net: Network,
    bundle: SensitivityBundle,
    loss: LossState,
) -> DualSet:
    """Map QP duals back onto the network and verify stationarity.

    The guard re-evaluates the pricing Lagrangian's derivative in each
    generator output that sits strictly inside its bounds; a violation
    means a sign-convention or wiring bug, not a numerical issue.
    """
    lambda_p = float(solution.eq_duals[0])
    lambda_q = float(solution.eq_duals[1])
    n_flow = model.flow_branches.size
    mu = np.zeros(net.n_branch)
    mu[model.flow_branches] = solution.range_duals[:n_flow]
    v = solution.range_duals[n_flow:]

    n = net.n_bus
    gbus = net.gen_bus_indices()
    x_vp = bundle.x_matrix[n:, :n]
    x_vq = bundle.x_matrix[n:, n:]
    cong_p = bundle.gsdf_pp.T @ mu
    cong_q = bundle.gsdf_pq.T @ mu
    volt_p = x_vp.T @ v
    volt_q = x_vq.T @ v

    n_gen = model.n_gen
    tol = max(solution.kkt_residual * 10.0, 1e-6) * (1.0 + abs(lambda_p) + abs(lambda_q))
    margin = 1e-7
    for k, g in enumerate(net.generators):
        pg = solution.primal[k]
        qg = solution.primal[n_gen + k]
        i = gbus[k]
        if pg > g.p_min + margin and pg < g.p_max - margin:
            resid = (
                g.cost_a
                + 2.0 * g.cost_b * pg
                - lambda_p * loss.df_p[i]
                - cong_p[i]
                - volt_p[i]
            )
            if abs(resid) > tol:
                raise DualConsistencyError(
                    f"active-power stationarity violated at generator {k} "
                    f"(bus {g.bus}): residual {resid:.3e}"
                )
        if qg > g.q_min + margin and qg < g.q_max - margin:
            resid = (
                2.0 * g.cost_c * qg
                - lambda_q * loss.df_q[i]
                - cong_q[i]
                - volt_q[i]
            )
            if abs(resid) > tol:
                raise DualConsistencyError(
                    f"reactive-power stationarity violated at generator {k} "
                    f"(bus {g.bus}): residual {resid:.3e}"
                )
    return DualSet(lambda_p=lambda_p, lambda_q=lambda_q, mu=mu, v=v)


def decompose_lmp(
    duals: DualSet, bundle: SensitivityBundle, loss: LossState
) -> LmpPrices:
    """Split nodal prices into energy, congestion, voltage, loss components.

    ALMP_i = lambda_p + sum_m mu_m GSF_pp[m,i] + sum_j v_j Xv[j,i]
             - LF_p[i] lambda_p, stored in that order; RLMP likewise with
    the P->Q sensitivities and the V/Q block of X.
    """
    n = loss.lf_p.shape[0]
    x_vp = bundle.x_matrix[n:, :n]
    x_vq = bundle.x_matrix[n:, n:]

    almp_energy = np.full(n, duals.lambda_p)
    almp_congestion = bundle.gsdf_pp.T @ duals.mu
    almp_voltage = x_vp.T @ duals.v
    almp_loss = -loss.lf_p * duals.lambda_p
    rlmp_energy = np.full(n, duals.lambda_q)
    rlmp_congestion = bundle.gsdf_pq.T @ duals.mu
    rlmp_voltage = x_vq.T @ duals.v
    rlmp_loss = -loss.lf_q * duals.lambda_q
    return LmpPrices(
        almp_total=almp_energy + almp_congestion + almp_voltage + almp_loss,
        almp_energy=almp_energy,
        almp_congestion=almp_congestion,
        almp_voltage=almp_voltage,
        almp_loss=almp_loss,
        rlmp_total=rlmp_energy + rlmp_congestion + rlmp_voltage + rlmp_loss,
        rlmp_energy=rlmp_energy,
        rlmp_congestion=rlmp_congestion,
        rlmp_voltage=rlmp_voltage,
        rlmp_loss=rlmp_loss,
    )


def solve_lmp(net: Network, opts: ModelOptions | None = None) -> LmpRun:
    """Run the full pricing iteration and keep the solve context."""
    opts = opts or ModelOptions()
    if opts.load_scale != 1.0:
        net = scale_load(net, opts.load_scale)
    adm = build_linear_admittance(net)
    bundle = build_sensitivity(net, adm)

    loss = zero_loss_state(net, adm)
    model = assemble_model(net, bundle, loss, opts)
    solution = solve_qp(model.problem, tol=opts.qp_tolerance)
    trace = [IterationRecord(0.0, 0.0, solution.objective)]

    if opts.loss_enabled:
        converged = False
        stabilized = False
        prev_norm = None
        hist: list[tuple[np.ndarray, np.ndarray]] = []
        m_br = net.n_branch
        for k in range(1, opts.max_iterations + 1):
            dispatch_p, dispatch_q = per_bus_dispatch(net, solution, model.n_gen)
            inj = net_injections(net, dispatch_p, dispatch_q, loss)
            raw = eval_branch_flows(bundle, inj)
            g_k = np.concatenate([raw.p_flow, raw.q_flow])
            x_k = np.concatenate([loss.flows.p_flow, loss.flows.q_flow])
            f_k = g_k - x_k
            norm_k = float(np.max(np.abs(f_k)))

            # The plain update re-linearizes at the recomputed flows. On
            # stiff cases (near-flat merit orders make the dispatch
            # hypersensitive to delivery-factor updates) that map expands,
            # so once the flow residual grows we switch permanently to a
            # damped secant (Anderson) update over the residual history
            # collected so far. Both updates share the fixed point.
            hist.append((x_k, f_k))
            if len(hist) > _ANDERSON_DEPTH + 1:
                hist.pop(0)
            if not stabilized and prev_norm is not None and norm_k > prev_norm * 1.05:
                stabilized = True
            prev_norm = norm_k

            if not stabilized:
                x_next = g_k
            else:
                beta = _STABILIZED_MIX
                x_next = x_k + beta * f_k
                if len(hist) >= 2:
                    basis = np.array([f_j - f_k for _, f_j in hist[:-1]]).T
                    coef, *_ = np.linalg.lstsq(basis, -f_k, rcond=None)
                    coef = np.clip(coef, -_ANDERSON_CLIP, _ANDERSON_CLIP)
                    target = x_k + beta * f_k
                    for (x_j, f_j), c in zip(hist[:-1], coef):
                        x_next = x_next + c * ((x_j + beta * f_j) - target)

            flows = FlowVector(p_flow=x_next[:m_br], q_flow=x_next[m_br:])
            new_loss = build_loss_state(flows, bundle, net, adm)
            delta = abs(new_loss.p_loss_total - loss.p_loss_total)
            loss = new_loss
            model = assemble_model(net, bundle, loss, opts)
            try:
                try:
                    solution = solve_qp(
                        model.problem, tol=opts.qp_tolerance, warm_start=solution
                    )
                except QpError:
                    solution = solve_qp(model.problem, tol=opts.qp_tolerance)
            except QpInfeasibleError as exc:
                raise QpInfeasibleError(
                    f"loss iteration {k}: {exc}", certificate=exc.certificate
                ) from exc
            trace.append(
                IterationRecord(loss.p_loss_total, loss.q_loss_total, solution.objective)
            )
            if delta < opts.loss_tolerance:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"loss iteration did not converge within {opts.max_iterations} "
                f"iterations (tolerance {opts.loss_tolerance})",
                trace=tuple(trace),
            )

    dispatch_p, dispatch_q = per_bus_dispatch(net, solution, model.n_gen)
    inj = net_injections(net, dispatch_p, dispatch_q, loss)
    flows = eval_branch_flows(bundle, inj)
    voltages = eval_voltages(bundle.x_matrix, inj)
    duals = extract_duals(model, solution, net, bundle, loss)
    prices = decompose_lmp(duals, bundle, loss)
    result = LmpResult(
        prices=prices,
        dispatch_p=solution.primal[: model.n_gen].copy(),
        dispatch_q=solution.primal[model.n_gen :].copy(),
        flows=flows,
        voltages=voltages,
        duals=duals,
        trace=tuple(trace),
    )
    return LmpRun(
        net=net,
        opts=opts,
        adm=adm,
        bundle=bundle,
        loss=loss,
        model=model,
        solution=solution,
        result=result,
    )


def iterate(net: Network, opts: ModelOptions | None = None) -> LmpResult:
    """Pricing entry point: lossless solve, loss updates, final prices."""
    return solve_lmp(net, opts).result


def aea(almp: np.ndarray, benchmark: np.ndarray, bus_ids=None) -> float:
    """Average absolute relative ALMP error against a benchmark vector."""
    almp = np.asarray(almp, float)
    benchmark = np.asarray(benchmark, float)
    if almp.shape != benchmark.shape:
        raise ValueError(
            f"length mismatch: {almp.shape[0]} model vs {benchmark.shape[0]} benchmark"
        )
    zero = np.flatnonzero(benchmark == 0.0)
    if zero.size:
        name = bus_ids[zero[0]] if bus_ids is not None else f"index {zero[0]}"
        raise ValueError(f"benchmark ALMP is zero at bus {name}")
    return float(np.mean(np.abs((almp - benchmark) / benchmark)))
