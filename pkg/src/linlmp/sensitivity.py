"""Linearized power-flow operator.

The 2N x 2N coupling matrix C maps stacked angles/voltages to stacked
active/reactive injections via [P; Q] = -C [theta; V]. Removing the
reference bus's theta row and column, inverting, and re-embedding zeros
gives X with [theta; V] = X [P; Q]. Branch-flow sensitivities to the four
injection/flow combinations are assembled from X and the tap-adjusted
series admittances into the GSDF matrices.

Indexing convention throughout: rows/columns 0..N-1 are theta/P positions,
N..2N-1 are V/Q positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import SingularSensitivityError
from .network import AdmittancePair, Network, build_linear_admittance

DEFAULT_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class InjectionVector:
    """Per-bus active/reactive injections, per-unit, file order."""

    p: np.ndarray
    q: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])


@dataclass(frozen=True)
class FlowVector:
    """Per-branch active/reactive flows, per-unit, oriented from -> to."""

    p_flow: np.ndarray
    q_flow: np.ndarray


@dataclass(frozen=True)
class SensitivityBundle:
    """C, its reference-reduced inverse X, and the four M x N GSDF matrices."""

    c_matrix: np.ndarray
    x_matrix: np.ndarray
    gsdf_pp: np.ndarray
    gsdf_pq: np.ndarray
    gsdf_qp: np.ndarray
    gsdf_qq: np.ndarray
    ref_bus: int


def build_c_matrix(adm: AdmittancePair) -> np.ndarray:
    """Assemble C = [[B', -G], [G', B]] from the admittance pair."""
    g_full, b_full = adm.y_full.real, adm.y_full.imag
    g_series, b_series = adm.y_series.real, adm.y_series.imag
    return np.block([[b_series, -g_full], [g_series, b_full]])


def build_x_matrix(
    c: np.ndarray,
    ref_bus: int,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> np.ndarray:
    """Invert -C with the reference theta row/column removed.

    The inverse of the (2N-1) x (2N-1) reduction is re-embedded with zeros
    in the removed row and column, so [theta; V] = X [P; Q] holds with the
    reference angle pinned at zero.

    Raises :class:`SingularSensitivityError` when the 1-norm condition
    estimate of the reduced matrix exceeds ``condition_limit``; the usual
    cause is a network without any shunt susceptance, which makes the
    reactive rows dependent.
    """
    two_n = c.shape[0]
    keep = np.arange(two_n) != ref_bus
    reduced = -c[np.ix_(keep, keep)]
    reduced = np.asfortranarray(reduced)

    getrf, gecon, getri = get_lapack_funcs(("getrf", "gecon", "getri"), (reduced,))
    anorm = np.linalg.norm(reduced, 1)
    lu, piv, info = getrf(reduced)
    rcond = 0.0
    if info == 0:
        rcond, _ = gecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0.0 or 1.0 / rcond > condition_limit:
        est = "inf" if rcond == 0.0 else f"{1.0 / rcond:.3e}"
        raise SingularSensitivityError(
            f"reduced sensitivity matrix is numerically singular "
            f"(condition estimate {est} > {condition_limit:.0e}); the network "
            "may lack shunt elements"
        )
    inv, info = getri(lu, piv)
    if info != 0:
        raise SingularSensitivityError("LU back-substitution failed")

    x = np.zeros_like(c)
    x[np.ix_(keep, keep)] = inv
    return x


def build_gsdf(
    x: np.ndarray, net: Network
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Branch-flow sensitivities to bus injections, four M x N matrices.

    For branch m = (i, j) with tap-adjusted series admittance g + jb the
    active-flow rows are g*(Xv_i - Xv_j) - b*(Xt_i - Xt_j) against the P
    columns and likewise against the Q columns; the reactive-flow rows swap
    the roles with a sign.
    """
    n = net.n_bus
    fidx, tidx = net.branch_endpoints()
    ys = np.array([br.series_admittance() for br in net.branches])
    g = ys.real[:, None]
    b = ys.imag[:, None]

    x_tt, x_tv = x[:n, :n], x[:n, n:]
    x_vt, x_vv = x[n:, :n], x[n:, n:]

    d_theta_p = x_tt[fidx] - x_tt[tidx]
    d_theta_q = x_tv[fidx] - x_tv[tidx]
    d_v_p = x_vt[fidx] - x_vt[tidx]
    d_v_q = x_vv[fidx] - x_vv[tidx]

    gsdf_pp = g * d_v_p - b * d_theta_p
    gsdf_pq = g * d_v_q - b * d_theta_q
    gsdf_qp = -g * d_theta_p - b * d_v_p
    gsdf_qq = -g * d_theta_q - b * d_v_q
    return gsdf_pp, gsdf_pq, gsdf_qp, gsdf_qq


def build_sensitivity(
    net: Network,
    adm: AdmittancePair | None = None,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> SensitivityBundle:
    """Build the full bundle (C, X, GSDF) for a network.

    Uses the symmetric linearization admittance unless a pair is given.
    """
    if adm is None:
        adm = build_linear_admittance(net)
    c = build_c_matrix(adm)
    ref = net.ref_index
    x = build_x_matrix(c, ref, condition_limit=condition_limit)
    gsdf_pp, gsdf_pq, gsdf_qp, gsdf_qq = build_gsdf(x, net)
    return SensitivityBundle(
        c_matrix=c,
        x_matrix=x,
        gsdf_pp=gsdf_pp,
        gsdf_pq=gsdf_pq,
        gsdf_qp=gsdf_qp,
        gsdf_qq=gsdf_qq,
        ref_bus=ref,
    )


def eval_branch_flows(bundle: SensitivityBundle, inj: InjectionVector) -> FlowVector:
    """Linear branch flows from injections through the GSDF matrices."""
    p_flow = bundle.gsdf_pp @ inj.p + bundle.gsdf_pq @ inj.q
    q_flow = bundle.gsdf_qp @ inj.p + bundle.gsdf_qq @ inj.q
    return FlowVector(p_flow=p_flow, q_flow=q_flow)


def eval_voltages(x: np.ndarray, inj: InjectionVector) -> np.ndarray:
    """Voltage magnitudes from the linear map V = Xv [P; Q].

    This is applied literally: the homogeneous linear expression stands in
    for the absolute voltage, and bounds in the pricing model constrain it
    directly.
    """
    n = inj.p.shape[0]
    return x[n:, :n] @ inj.p + x[n:, n:] @ inj.q


def eval_angles(x: np.ndarray, inj: InjectionVector) -> np.ndarray:
    """Bus angles from the linear map theta = Xt [P; Q], radians."""
    n = inj.p.shape[0]
    return x[:n, :n] @ inj.p + x[:n, n:] @ inj.q
