"""Independent truth sources: full Newton-Raphson AC power flow, exact
pi-model branch flows, and a numerical price probe.

These never share code paths with the linear model they audit: flows and
injections here come from the exact AC equations in polar form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import Network, build_admittance


@dataclass(frozen=True)
class PfSolution:
    """Polar power-flow solution; reference angle is zero."""

    v_mag: np.ndarray
    v_ang: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float


@dataclass(frozen=True)
class AcBranchFlow:
    """Exact complex flows at both branch ends, oriented into the branch."""

    s_from: np.ndarray
    s_to: np.ndarray
    i_series_mag: np.ndarray

    @property
    def losses(self) -> np.ndarray:
        return self.s_from + self.s_to


def case_dispatch(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-bus generation and voltage setpoints from the case snapshot.

    Returns (p_gen, q_gen, v_set); v_set is NaN where no generator sits.
    With several units at one bus the first unit's setpoint wins.
    """
    n = net.n_bus
    p_gen = np.zeros(n)
    q_gen = np.zeros(n)
    v_set = np.full(n, np.nan)
    gidx = net.gen_bus_indices()
    for k, g in enumerate(net.generators):
        i = gidx[k]
        p_gen[i] += g.p_start
        q_gen[i] += g.q_start
        if np.isnan(v_set[i]):
            v_set[i] = g.v_setpoint
    return p_gen, q_gen, v_set


def newton_pf(
    net: Network,
    p_gen: np.ndarray,
    q_gen: np.ndarray | None = None,
    v_set: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> PfSolution:
    """Classic polar Newton-Raphson power flow from a flat start.

    Buses with a finite ``v_set`` entry are held at that magnitude (PV);
    the reference bus absorbs the active mismatch. When ``v_set`` is None
    every non-reference bus is PQ with reactive generation ``q_gen``.
    Reactive limits are not enforced.
    """
    n = net.n_bus
    ref = net.ref_index
    adm = build_admittance(net)
    y = adm.y_full
    pd, qd = net.demand_vectors()
    if q_gen is None:
        q_gen = np.zeros(n)
    if v_set is None:
        v_set = np.full(n, np.nan)
    s_sched = (p_gen - pd) + 1j * (q_gen - qd)

    is_pv = np.isfinite(v_set)
    is_pv[ref] = False
    pv = np.flatnonzero(is_pv)
    pq = np.flatnonzero(~is_pv & (np.arange(n) != ref))
    pvpq = np.concatenate([pv, pq])
    pvpq.sort()

    vm = np.ones(n)
    vm[is_pv] = v_set[is_pv]
    vm[ref] = v_set[ref] if np.isfinite(v_set[ref]) else 1.0
    va = np.zeros(n)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s_calc = v * np.conj(y @ v)
        ds = s_calc - s_sched
        return np.concatenate([ds.real[pvpq], ds.imag[pq]]), v, s_calc

    f, v, _ = mismatch(vm, va)
    max_mis = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    converged = max_mis <= tol
    while not converged and it < max_iter:
        it += 1
        ibus = y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
        ds_dvm = diag_vnorm @ np.conj(diag_i) + diag_v @ np.conj(y @ diag_vnorm)

        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        va[pvpq] += dx[: pvpq.size]
        vm[pq] += dx[pvpq.size :]
        f, v, _ = mismatch(vm, va)
        max_mis = float(np.max(np.abs(f))) if f.size else 0.0
        converged = max_mis <= tol

    return PfSolution(
        v_mag=vm, v_ang=va, converged=converged, iterations=it, max_mismatch=max_mis
    )


def bus_injections(net: Network, pf: PfSolution) -> tuple[np.ndarray, np.ndarray]:
    """Exact AC net injections (gen minus load) at the solved voltages."""
    adm = build_admittance(net)
    v = pf.v_mag * np.exp(1j * pf.v_ang)
    s = v * np.conj(adm.y_full @ v)
    return s.real, s.imag


def branch_flows_ac(pf: PfSolution, net: Network) -> AcBranchFlow:
    """Exact complex pi-model flows; per-branch loss is s_from + s_to."""
    fidx, tidx = net.branch_endpoints()
    v = pf.v_mag * np.exp(1j * pf.v_ang)
    vf, vt = v[fidx], v[tidx]
    ys = np.array([1.0 / complex(br.r, br.x) for br in net.branches])
    bc = np.array([br.b_charge for br in net.branches])
    tap = np.array([br.tap for br in net.branches])

    y_ff = (ys + 0.5j * bc) / (tap * tap)
    y_ft = -ys / tap
    y_tt = ys + 0.5j * bc
    y_tf = -ys / tap

    i_from = y_ff * vf + y_ft * vt
    i_to = y_tf * vf + y_tt * vt
    s_from = vf * np.conj(i_from)
    s_to = vt * np.conj(i_to)
    i_series = np.abs(ys * (vf / tap - vt))
    return AcBranchFlow(s_from=s_from, s_to=s_to, i_series_mag=i_series)


def finite_diff_price(run, bus_index: int, kind: str, eps: float = 1e-3):
    """Numerical LMP oracle: central difference of the optimal cost under a
    demand perturbation at one bus, with the loss constants frozen.

    ``run`` is an :class:`~linlmp.engine.LmpRun`. Returns the price in
    currency per per-unit, or ``None`` when the two perturbed solves land
    on different active sets (degenerate probe, comparison skipped).
    """
    from .engine import assemble_model
    from .qpsolver import solve_qp

    if kind not in ("active", "reactive"):
        raise ValueError(f"kind must be 'active' or 'reactive', got {kind!r}")

    costs = []
    actives = []
    for sign in (+1.0, -1.0):
        bus = run.net.buses[bus_index]
        if kind == "active":
            bus = replace(bus, p_demand=bus.p_demand + sign * eps)
        else:
            bus = replace(bus, q_demand=bus.q_demand + sign * eps)
        buses = list(run.net.buses)
        buses[bus_index] = bus
        net_pert = replace(run.net, buses=tuple(buses))
        model = assemble_model(net_pert, run.bundle, run.loss, run.opts)
        sol = solve_qp(model.problem, tol=run.opts.qp_tolerance, warm_start=run.solution)
        costs.append(sol.objective)
        actives.append(frozenset(sol.active))
    if actives[0] != actives[1]:
        return None
    return (costs[0] - costs[1]) / (2.0 * eps)
