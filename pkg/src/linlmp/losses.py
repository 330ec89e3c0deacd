"""Quadratic loss model: totals, marginal loss factors, delivery factors,
fictional nodal demands.

Losses follow the active-flow approximation: branch current is taken as the
active flow, so P_loss = sum(P_m**2 * R_m) and Q_loss = sum(P_m**2 * X_m).
All quantities here are constants within one pricing iteration; the engine
rebuilds them between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import AdmittancePair, Network, total_shunt_susceptance
from .sensitivity import FlowVector, SensitivityBundle


@dataclass(frozen=True)
class LossState:
    """Loss constants frozen into one QP iteration."""

    flows: FlowVector
    p_loss_total: float
    q_loss_total: float
    lf_p: np.ndarray
    lf_q: np.ndarray
    df_p: np.ndarray
    df_q: np.ndarray
    fnd_p: np.ndarray
    fnd_q: np.ndarray
    q_balance_constant: float


def compute_losses(flows: FlowVector, net: Network) -> tuple[float, float]:
    """Total active/reactive losses from branch flows, P**2 R and P**2 X."""
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    sq = flows.p_flow * flows.p_flow
    return float(sq @ r), float(sq @ x)


def compute_loss_factors(
    flows: FlowVector, bundle: SensitivityBundle, net: Network
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Marginal loss factors and delivery factors per bus.

    lf_p[i] = sum_m 2 P_m GSF_pp[m, i] R_m, lf_q[i] likewise with the
    P->Q sensitivities and reactances; df = 1 - lf. Negative entries are
    legal: injecting there reduces losses.
    """
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    wp = 2.0 * flows.p_flow * r
    wq = 2.0 * flows.p_flow * x
    lf_p = bundle.gsdf_pp.T @ wp
    lf_q = bundle.gsdf_pq.T @ wq
    return lf_p, lf_q, 1.0 - lf_p, 1.0 - lf_q


def compute_fnd(flows: FlowVector, net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Fictional nodal demand: half of each branch loss at each end bus."""
    n = net.n_bus
    fidx, tidx = net.branch_endpoints()
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    sq = flows.p_flow * flows.p_flow
    fnd_p = np.zeros(n)
    fnd_q = np.zeros(n)
    np.add.at(fnd_p, fidx, 0.5 * sq * r)
    np.add.at(fnd_p, tidx, 0.5 * sq * r)
    np.add.at(fnd_q, fidx, 0.5 * sq * x)
    np.add.at(fnd_q, tidx, 0.5 * sq * x)
    return fnd_p, fnd_q


def net_injections(
    net: Network,
    dispatch_p: np.ndarray,
    dispatch_q: np.ndarray,
    loss: LossState,
):
    """Bus injections with FND as virtual demand: G - D - F per bus."""
    from .sensitivity import InjectionVector

    pd, qd = net.demand_vectors()
    return InjectionVector(
        p=dispatch_p - pd - loss.fnd_p,
        q=dispatch_q - qd - loss.fnd_q,
    )


def zero_loss_state(net: Network, adm: AdmittancePair) -> LossState:
    """The lossless state: zero flows and losses, unit delivery factors."""
    n, m = net.n_bus, net.n_branch
    return LossState(
        flows=FlowVector(p_flow=np.zeros(m), q_flow=np.zeros(m)),
        p_loss_total=0.0,
        q_loss_total=0.0,
        lf_p=np.zeros(n),
        lf_q=np.zeros(n),
        df_p=np.ones(n),
        df_q=np.ones(n),
        fnd_p=np.zeros(n),
        fnd_q=np.zeros(n),
        q_balance_constant=-total_shunt_susceptance(adm),
    )


def build_loss_state(
    flows: FlowVector,
    bundle: SensitivityBundle,
    net: Network,
    adm: AdmittancePair,
) -> LossState:
    """Full loss state at a flow linearization point."""
    p_loss, q_loss = compute_losses(flows, net)
    lf_p, lf_q, df_p, df_q = compute_loss_factors(flows, bundle, net)
    fnd_p, fnd_q = compute_fnd(flows, net)
    return LossState(
        flows=flows,
        p_loss_total=p_loss,
        q_loss_total=q_loss,
        lf_p=lf_p,
        lf_q=lf_q,
        df_p=df_p,
        df_q=df_q,
        fnd_p=fnd_p,
        fnd_q=fnd_q,
        q_balance_constant=-total_shunt_susceptance(adm),
    )


def loss_diagnostics(flows: FlowVector, net: Network) -> dict[str, float]:
    """Report the (P**2 + Q**2) R / X loss alternative for comparison.

    Diagnostic only; the pricing model always uses the active-flow
    approximation.
    """
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    sq_p = flows.p_flow * flows.p_flow
    sq_pq = sq_p + flows.q_flow * flows.q_flow
    return {
        "p_loss_active_only": float(sq_p @ r),
        "q_loss_active_only": float(sq_p @ x),
        "p_loss_with_reactive": float(sq_pq @ r),
        "q_loss_with_reactive": float(sq_pq @ x),
    }
