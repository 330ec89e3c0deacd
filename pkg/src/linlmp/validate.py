"""Invariant battery: every identity the model is built on, checked
numerically on a concrete case.

Used by the ``validate`` CLI command and reused by the test suite. Checks
are pure and deterministic (fixed RNG seed for the sampled probes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acpf import (
    branch_flows_ac,
    bus_injections,
    case_dispatch,
    finite_diff_price,
    newton_pf,
)
from .engine import LmpRun, ModelOptions, solve_lmp
from .losses import compute_fnd, compute_loss_factors, compute_losses
from .network import Network
from .qpsolver import kkt_residual
from .sensitivity import (
    InjectionVector,
    eval_branch_flows,
    eval_voltages,
)

DEFAULT_SEED = 20240118


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _direct_flows(bundle, net, inj: InjectionVector):
    """Branch flows via the two-step path: solve angles/voltages, then the
    per-branch difference formulas. Independent of the GSDF matrices."""
    n = net.n_bus
    x = bundle.x_matrix
    stacked = x @ inj.stacked()
    theta, v = stacked[:n], stacked[n:]
    fidx, tidx = net.branch_endpoints()
    ys = np.array([br.series_admittance() for br in net.branches])
    g, b = ys.real, ys.imag
    dv = v[fidx] - v[tidx]
    dt = theta[fidx] - theta[tidx]
    p = dv * g - b * dt
    q = -b * dv - g * dt
    return p, q


def audit_linearization(run: LmpRun) -> dict:
    """Feed the Newton oracle's operating point through the linear maps
    and measure how far the linear voltages and active flows sit from the
    exact AC solution.

    The oracle replays the priced dispatch (generator buses held at the
    linear model's voltages, reference bus absorbing the mismatch). The
    linear maps are then evaluated at the oracle's net injections with
    each branch's exact series loss split half-and-half onto its end
    buses as virtual demand (the model's own fictional-demand convention
    applied to oracle data); the leftover global reactive surplus, which
    the model's reactive-balance equality never admits, is removed
    uniformly. Flows are compared at the branch midpoint,
    (from-end - to-end)/2, matching the symmetric difference form of the
    linear branch equations.
    """
    from .network import total_shunt_susceptance

    net = run.net
    res = run.result
    gbus = net.gen_bus_indices()
    p_gen = np.zeros(net.n_bus)
    np.add.at(p_gen, gbus, res.dispatch_p)
    v_set = np.full(net.n_bus, np.nan)
    v_set[gbus] = res.voltages[gbus]
    pf = newton_pf(net, p_gen, v_set=v_set)
    if not pf.converged:
        raise RuntimeError("Newton oracle did not converge on the replay")
    acf = branch_flows_ac(pf, net)
    p_inj, q_inj = bus_injections(net, pf)

    i_sq = acf.i_series_mag**2
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    fidx, tidx = net.branch_endpoints()
    fnd_p = np.zeros(net.n_bus)
    fnd_q = np.zeros(net.n_bus)
    np.add.at(fnd_p, fidx, 0.5 * i_sq * r)
    np.add.at(fnd_p, tidx, 0.5 * i_sq * r)
    np.add.at(fnd_q, fidx, 0.5 * i_sq * x)
    np.add.at(fnd_q, tidx, 0.5 * i_sq * x)
    p = p_inj - fnd_p
    q = q_inj - fnd_q
    q -= (q.sum() + total_shunt_susceptance(run.adm)) / net.n_bus

    inj = InjectionVector(p=p, q=q)
    v_lin = eval_voltages(run.bundle.x_matrix, inj)
    flows = eval_branch_flows(run.bundle, inj)
    ac_mid_p = 0.5 * (acf.s_from.real - acf.s_to.real)
    return {
        "pf": pf,
        "v_error": float(np.max(np.abs(v_lin - pf.v_mag))),
        "flow_error": float(np.max(np.abs(flows.p_flow - ac_mid_p))),
        "newton_iterations": pf.iterations,
    }


def run_checks(
    net: Network,
    opts: ModelOptions | None = None,
    seed: int = DEFAULT_SEED,
    n_probes: int = 4,
) -> list[CheckResult]:
    """Run the full battery on one case; returns one result per check."""
    opts = opts or ModelOptions()
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def check(name, passed, detail):
        results.append(CheckResult(name, bool(passed), detail))

    run = solve_lmp(net, opts)
    net_s = run.net  # load-scaled copy used by everything downstream
    bundle, loss = run.bundle, run.loss
    n = net_s.n_bus

    # sensitivity identities ------------------------------------------------
    keep = np.arange(2 * n) != bundle.ref_bus
    prod = (-bundle.c_matrix[np.ix_(keep, keep)]) @ bundle.x_matrix[np.ix_(keep, keep)]
    err = float(np.max(np.abs(prod - np.eye(2 * n - 1))))
    check("reduced-inverse-identity", err <= 1e-8, f"max |(-C)X - I| = {err:.2e}")

    ref = bundle.ref_bus
    err = max(
        float(np.max(np.abs(bundle.x_matrix[ref, :]))),
        float(np.max(np.abs(bundle.x_matrix[:, ref]))),
    )
    check("x-reference-zeroed", err == 0.0, f"max |X ref row/col| = {err:.2e}")

    err = max(
        float(np.max(np.abs(bundle.gsdf_pp[:, ref]))),
        float(np.max(np.abs(bundle.gsdf_qp[:, ref]))),
    )
    check("gsdf-reference-column-zero", err == 0.0, f"max = {err:.2e}")

    # flow identity on random injections ------------------------------------
    worst = 0.0
    for _ in range(100):
        inj = InjectionVector(p=rng.normal(0, 1, n), q=rng.normal(0, 1, n))
        fl = eval_branch_flows(bundle, inj)
        dp, dq = _direct_flows(bundle, net_s, inj)
        worst = max(
            worst,
            float(np.max(np.abs(fl.p_flow - dp))),
            float(np.max(np.abs(fl.q_flow - dq))),
        )
    check("gsdf-flow-identity", worst <= 1e-10, f"max diff over 100 draws = {worst:.2e}")

    # loss model -------------------------------------------------------------
    r_vec = np.array([br.r for br in net_s.branches])
    per_branch = loss.flows.p_flow**2 * r_vec
    check(
        "loss-sign",
        bool(np.all(per_branch >= 0.0) and loss.p_loss_total >= 0.0),
        f"min branch loss = {float(per_branch.min()) if per_branch.size else 0.0:.2e}",
    )

    lf_err = _loss_factor_fd_error(net_s, bundle, loss.flows)
    check("loss-factor-finite-difference", lf_err <= 1e-6, f"max |lf - fd| = {lf_err:.2e}")

    fnd_p, fnd_q = compute_fnd(loss.flows, net_s)
    p_tot, q_tot = compute_losses(loss.flows, net_s)
    err = max(abs(fnd_p.sum() - p_tot), abs(fnd_q.sum() - q_tot))
    check("fnd-conservation", err <= 1e-12, f"|sum fnd - loss| = {err:.2e}")

    # pricing ----------------------------------------------------------------
    check(
        "qp-kkt-residual",
        run.solution.kkt_residual <= opts.qp_tolerance * 100,
        f"residual = {run.solution.kkt_residual:.2e}",
    )

    pr = run.result.prices
    closure = max(
        float(np.max(np.abs(
            pr.almp_total - (pr.almp_energy + pr.almp_congestion
                             + pr.almp_voltage + pr.almp_loss)
        ))),
        float(np.max(np.abs(
            pr.rlmp_total - (pr.rlmp_energy + pr.rlmp_congestion
                             + pr.rlmp_voltage + pr.rlmp_loss)
        ))),
    )
    check("decomposition-closure", closure <= 1e-12, f"max gap = {closure:.2e}")

    mu, v = run.result.duals.mu, run.result.duals.v
    x_vp = bundle.x_matrix[n:, :n]
    idle_mu = np.abs(mu) <= 1e-12
    idle_v = np.abs(v) <= 1e-12
    cong_idle = bundle.gsdf_pp[idle_mu].T @ mu[idle_mu] if idle_mu.any() else np.zeros(n)
    volt_idle = x_vp[idle_v].T @ v[idle_v] if idle_v.any() else np.zeros(n)
    err = max(
        float(np.max(np.abs(cong_idle))) if cong_idle.size else 0.0,
        float(np.max(np.abs(volt_idle))) if volt_idle.size else 0.0,
    )
    check("complementarity-surfaces", err == 0.0, f"idle contribution = {err:.2e}")

    # shadow-price probes ----------------------------------------------------
    candidates = rng.permutation(n)
    probed = skipped = 0
    worst_rel = 0.0
    for i in candidates:
        if probed >= n_probes:
            break
        expected = run.result.prices.almp_total[i]
        if abs(expected) < 1e-9:
            continue
        fd = finite_diff_price(run, int(i), "active", eps=1e-3)
        if fd is None:
            skipped += 1
            continue
        probed += 1
        worst_rel = max(worst_rel, abs(fd - expected) / abs(expected))
    check(
        "shadow-price-oracle",
        probed > 0 and worst_rel <= 0.005,
        f"{probed} probes ({skipped} degenerate skipped), worst rel err = {worst_rel:.2e}",
    )

    # linearization audit -----------------------------------------------------
    try:
        audit = audit_linearization(run)
        check(
            "linearization-audit",
            audit["v_error"] <= 0.02 and audit["flow_error"] <= 0.05,
            f"max |dV| = {audit['v_error']:.4f} pu, "
            f"max |dP| = {audit['flow_error']:.4f} pu",
        )
    except RuntimeError as exc:
        check("linearization-audit", False, str(exc))

    return results


def _loss_factor_fd_error(net, bundle, flows, eps: float = 1e-4) -> float:
    """Worst gap between analytic loss factors and central differences of
    the total-loss expression under per-bus injection perturbations."""
    lf_p, lf_q, _, _ = compute_loss_factors(flows, bundle, net)
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])

    # columnwise: flows under p_i +/- eps differ by +/- eps * gsdf_pp[:, i]
    base = flows.p_flow[:, None]
    up = base + eps * bundle.gsdf_pp
    dn = base - eps * bundle.gsdf_pp
    fd_p = ((up**2 - dn**2).T @ r) / (2 * eps)
    up = base + eps * bundle.gsdf_pq
    dn = base - eps * bundle.gsdf_pq
    fd_q = ((up**2 - dn**2).T @ x) / (2 * eps)
    return max(
        float(np.max(np.abs(fd_p - lf_p))),
        float(np.max(np.abs(fd_q - lf_q))),
    )
