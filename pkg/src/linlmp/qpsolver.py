"""Convex quadratic programming with crisp dual multipliers.

Solves
    min  sum_i q_i x_i**2 + c_i x_i
    s.t. A x = b                  (equality duals: lambda)
         lo <= R x <= hi          (signed range duals: mu)
         lb <= x <= ub            (signed bound duals)

with a primal active-set method (null-space steps, Bland-style lowest-index
tie breaking). Note the objective carries no 1/2 factor: the quadratic
coefficients multiply x_i**2 directly.

Sign convention for inequality duals: stationarity reads
    grad f(x) - A^T lambda - R^T mu - bound_duals = 0,
so a range or bound dual is positive when its lower side binds, negative at
the upper side, and exactly zero when inactive. This is the
lower-minus-upper convention, and it makes the pricing Lagrangian's
stationarity hold verbatim.

Feasibility bootstrapping: the midpoint of the variable bounds is projected
onto the equality manifold; if ranges or bounds are still violated a
phase-1 LP (HiGHS via scipy) finds a feasible point or an infeasibility
certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import (
    QpInfeasibleError,
    QpIterationLimitError,
    QpUnboundedError,
)

_RANK_TOL = 1e-11


@dataclass(frozen=True)
class QpProblem:
    """Dense convex QP with diagonal quadratic objective."""

    num_vars: int
    quadratic_diag: np.ndarray
    linear_cost: np.ndarray
    eq_rows: np.ndarray
    eq_rhs: np.ndarray
    range_rows: np.ndarray
    range_lo: np.ndarray
    range_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        n = self.num_vars
        object.__setattr__(self, "quadratic_diag", np.asarray(self.quadratic_diag, float))
        object.__setattr__(self, "linear_cost", np.asarray(self.linear_cost, float))
        object.__setattr__(self, "eq_rows", np.asarray(self.eq_rows, float).reshape(-1, n))
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, float).ravel())
        object.__setattr__(self, "range_rows", np.asarray(self.range_rows, float).reshape(-1, n))
        object.__setattr__(self, "range_lo", np.asarray(self.range_lo, float).ravel())
        object.__setattr__(self, "range_hi", np.asarray(self.range_hi, float).ravel())
        object.__setattr__(self, "lb", np.asarray(self.lb, float).ravel())
        object.__setattr__(self, "ub", np.asarray(self.ub, float).ravel())
        if np.any(self.quadratic_diag < 0.0):
            raise ValueError("quadratic coefficients must be nonnegative (convexity)")
        if np.any(self.range_lo > self.range_hi):
            raise ValueError("range lower bound exceeds upper bound")
        if np.any(self.lb > self.ub):
            raise ValueError("variable lower bound exceeds upper bound")

    @classmethod
    def build(cls, quadratic_diag, linear_cost, equalities=(), ranges=(), var_bounds=None):
        """Convenience constructor from (row, rhs) and (row, lo, hi) lists."""
        q = np.asarray(quadratic_diag, float)
        n = q.shape[0]
        eq_rows = np.array([row for row, _ in equalities], float).reshape(-1, n)
        eq_rhs = np.array([rhs for _, rhs in equalities], float)
        rng_rows = np.array([row for row, _, _ in ranges], float).reshape(-1, n)
        rng_lo = np.array([lo for _, lo, _ in ranges], float)
        rng_hi = np.array([hi for _, _, hi in ranges], float)
        if var_bounds is None:
            lb = np.full(n, -np.inf)
            ub = np.full(n, np.inf)
        else:
            lb = np.array([b[0] for b in var_bounds], float)
            ub = np.array([b[1] for b in var_bounds], float)
        return cls(
            num_vars=n,
            quadratic_diag=q,
            linear_cost=np.asarray(linear_cost, float),
            eq_rows=eq_rows,
            eq_rhs=eq_rhs,
            range_rows=rng_rows,
            range_lo=rng_lo,
            range_hi=rng_hi,
            lb=lb,
            ub=ub,
        )

    def objective(self, x: np.ndarray) -> float:
        return float(self.quadratic_diag @ (x * x) + self.linear_cost @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.quadratic_diag * x + self.linear_cost


@dataclass(frozen=True)
class QpSolution:
    """Primal/dual solution. ``active`` lists the optimal working set as
    ('range'|'bound', index, 'lo'|'hi') triples for warm starting."""

    primal: np.ndarray
    eq_duals: np.ndarray
    range_duals: np.ndarray
    bound_duals: np.ndarray
    objective: float
    kkt_residual: float
    active: tuple = field(default=())
    iterations: int = 0


def kkt_residual(problem: QpProblem, solution) -> float:
    """Max-abs KKT residual: stationarity, primal feasibility, complementarity.

    Accepts any object with primal/eq_duals/range_duals/bound_duals arrays.
    """
    x = np.asarray(solution.primal, float)
    lam = np.asarray(solution.eq_duals, float)
    mu = np.asarray(solution.range_duals, float)
    beta = np.asarray(solution.bound_duals, float)

    stat = problem.gradient(x) - beta
    if problem.eq_rows.size:
        stat -= problem.eq_rows.T @ lam
    if problem.range_rows.size:
        stat -= problem.range_rows.T @ mu
    worst = float(np.max(np.abs(stat))) if stat.size else 0.0

    if problem.eq_rows.size:
        worst = max(worst, float(np.max(np.abs(problem.eq_rows @ x - problem.eq_rhs))))

    def side_residuals(vals, lo, hi, duals):
        res = 0.0
        viol_lo = np.where(np.isfinite(lo), np.maximum(0.0, lo - vals), 0.0)
        viol_hi = np.where(np.isfinite(hi), np.maximum(0.0, vals - hi), 0.0)
        if vals.size:
            res = max(res, float(np.max(viol_lo)), float(np.max(viol_hi)))
        pos = np.maximum(0.0, duals)
        neg = np.maximum(0.0, -duals)
        lo_safe = np.where(np.isfinite(lo), lo, 0.0)
        hi_safe = np.where(np.isfinite(hi), hi, 0.0)
        comp_lo = np.where(np.isfinite(lo), pos * np.abs(vals - lo_safe), pos)
        comp_hi = np.where(np.isfinite(hi), neg * np.abs(hi_safe - vals), neg)
        if vals.size:
            res = max(res, float(np.max(comp_lo)), float(np.max(comp_hi)))
        return res

    if problem.range_rows.size:
        worst = max(
            worst,
            side_residuals(problem.range_rows @ x, problem.range_lo, problem.range_hi, mu),
        )
    worst = max(worst, side_residuals(x, problem.lb, problem.ub, beta))
    return worst


# ---------------------------------------------------------------------------
# internals
# ---------------------------------------------------------------------------

def _midpoint(lb, ub):
    mid = np.zeros_like(lb)
    both = np.isfinite(lb) & np.isfinite(ub)
    only_lo = np.isfinite(lb) & ~np.isfinite(ub)
    only_hi = ~np.isfinite(lb) & np.isfinite(ub)
    mid[both] = 0.5 * (lb[both] + ub[both])
    mid[only_lo] = lb[only_lo] + 1.0
    mid[only_hi] = ub[only_hi] - 1.0
    return mid


def _project_to_equalities(x0, eq_rows, eq_rhs):
    if eq_rows.size == 0:
        return x0.copy()
    delta, *_ = np.linalg.lstsq(eq_rows, eq_rhs - eq_rows @ x0, rcond=None)
    return x0 + delta


def _feasible(problem, x, tol):
    if problem.eq_rows.size and np.max(np.abs(problem.eq_rows @ x - problem.eq_rhs)) > tol:
        return False
    if problem.range_rows.size:
        vals = problem.range_rows @ x
        if np.any(vals < problem.range_lo - tol) or np.any(vals > problem.range_hi + tol):
            return False
    return not (np.any(x < problem.lb - tol) or np.any(x > problem.ub + tol))


def _phase1(problem: QpProblem, tol: float) -> np.ndarray:
    """Feasible point via an LP minimizing total constraint violation.

    Bounds are kept hard; equalities and ranges get slack variables. A
    positive optimum is an infeasibility proof and the LP duals form the
    certificate.
    """
    n = problem.num_vars
    n_eq = problem.eq_rows.shape[0]
    rows, rhs, slack_col = [], [], []
    n_slack = 0

    def add(row_x, slack, bound):
        nonlocal n_slack
        rows.append((row_x, slack))
        rhs.append(bound)

    for k in range(n_eq):
        add(problem.eq_rows[k], n_slack, problem.eq_rhs[k])
        add(-problem.eq_rows[k], n_slack, -problem.eq_rhs[k])
        n_slack += 1
    lo_slack_of_range = {}
    hi_slack_of_range = {}
    for j in range(problem.range_rows.shape[0]):
        if np.isfinite(problem.range_hi[j]):
            add(problem.range_rows[j], n_slack, problem.range_hi[j])
            hi_slack_of_range[j] = len(rows) - 1
            n_slack += 1
        if np.isfinite(problem.range_lo[j]):
            add(-problem.range_rows[j], n_slack, -problem.range_lo[j])
            lo_slack_of_range[j] = len(rows) - 1
            n_slack += 1

    if not rows:
        return _midpoint(problem.lb, problem.ub)

    a_ub = np.zeros((len(rows), n + n_slack))
    for i, (row_x, slack) in enumerate(rows):
        a_ub[i, :n] = row_x
        a_ub[i, n + slack] = -1.0
    c_lp = np.concatenate([np.zeros(n), np.ones(n_slack)])
    bounds = [(problem.lb[i], problem.ub[i]) for i in range(n)] + [(0, None)] * n_slack
    res = linprog(c_lp, A_ub=a_ub, b_ub=np.array(rhs), bounds=bounds, method="highs")
    if not res.success and res.status != 3:
        raise QpInfeasibleError(f"phase-1 LP failed: {res.message}")
    if res.fun > max(tol, 1e-9) * (1.0 + np.abs(rhs).max()):
        marginals = np.asarray(res.ineqlin.marginals)
        certificate = {
            "ub_rows": a_ub[:, :n],
            "ub_rhs": np.array(rhs),
            "ub_multipliers": -marginals,
            "bound_lo_multipliers": np.asarray(res.lower.marginals)[:n],
            "bound_hi_multipliers": -np.asarray(res.upper.marginals)[:n],
            "violation": float(res.fun),
        }
        raise QpInfeasibleError(
            f"problem infeasible (minimum total violation {res.fun:.3e})",
            certificate=certificate,
        )
    return np.clip(res.x[:n], problem.lb, problem.ub)


def _null_space(w_mat: np.ndarray, n: int) -> np.ndarray:
    if w_mat.shape[0] == 0:
        return np.eye(n)
    q, r, _ = scipy.linalg.qr(w_mat.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(r)) if r.size else np.array([])
    scale = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > max(scale, 1.0) * _RANK_TOL))
    return q[:, rank:]


def solve_qp(problem: QpProblem, tol: float = 1e-8, warm_start=None, max_iter=None):
    """Solve a convex QP, returning primal values and signed duals.

    ``warm_start`` may be a previous :class:`QpSolution`; its primal point
    is projected onto the new equality manifold and its active set seeds
    the working set when still consistent. Raises
    :class:`QpInfeasibleError`, :class:`QpUnboundedError` or
    :class:`QpIterationLimitError`.
    """
    fixed = problem.lb == problem.ub
    if np.any(fixed):
        return _solve_with_fixed(problem, fixed, tol, warm_start, max_iter)
    return _solve_free(problem, tol, warm_start, max_iter)


def _solve_with_fixed(problem, fixed, tol, warm_start, max_iter):
    free = ~fixed
    x_fix = problem.lb[fixed]
    n_free = int(free.sum())
    eq_rows = problem.eq_rows[:, free]
    eq_rhs = problem.eq_rhs - problem.eq_rows[:, fixed] @ x_fix
    rng_rows = problem.range_rows[:, free]
    shift = problem.range_rows[:, fixed] @ x_fix if problem.range_rows.size else 0.0
    sub = QpProblem(
        num_vars=n_free,
        quadratic_diag=problem.quadratic_diag[free],
        linear_cost=problem.linear_cost[free],
        eq_rows=eq_rows,
        eq_rhs=eq_rhs,
        range_rows=rng_rows,
        range_lo=problem.range_lo - shift,
        range_hi=problem.range_hi - shift,
        lb=problem.lb[free],
        ub=problem.ub[free],
    )
    warm_sub = None
    if warm_start is not None:
        warm_sub = QpSolution(
            primal=np.asarray(warm_start.primal)[free],
            eq_duals=np.zeros(0),
            range_duals=np.zeros(0),
            bound_duals=np.zeros(0),
            objective=0.0,
            kkt_residual=np.inf,
            active=tuple(a for a in warm_start.active if a[0] == "range"),
        )
    sol = _solve_free(sub, tol, warm_sub, max_iter)

    x = np.empty(problem.num_vars)
    x[free] = sol.primal
    x[fixed] = x_fix
    bound_duals = np.zeros(problem.num_vars)
    bound_duals[free] = sol.bound_duals
    resid = problem.gradient(x)
    if problem.eq_rows.size:
        resid -= problem.eq_rows.T @ sol.eq_duals
    if problem.range_rows.size:
        resid -= problem.range_rows.T @ sol.range_duals
    bound_duals[fixed] = resid[fixed]

    free_idx = np.flatnonzero(free)
    active = tuple(
        a if a[0] == "range" else ("bound", int(free_idx[a[1]]), a[2])
        for a in sol.active
    )
    full = QpSolution(
        primal=x,
        eq_duals=sol.eq_duals,
        range_duals=sol.range_duals,
        bound_duals=bound_duals,
        objective=problem.objective(x),
        kkt_residual=0.0,
        active=active,
        iterations=sol.iterations,
    )
    return QpSolution(
        **{**full.__dict__, "kkt_residual": kkt_residual(problem, full)}
    )


def _solve_free(problem: QpProblem, tol, warm_start, max_iter):
    n = problem.num_vars
    n_rng = problem.range_rows.shape[0]

    if n == 0:
        x = np.zeros(0)
        if not _feasible(problem, x, max(tol, 1e-9)):
            raise QpInfeasibleError("all variables fixed and constraints violated")
        sol = QpSolution(
            primal=x,
            eq_duals=np.zeros(problem.eq_rows.shape[0]),
            range_duals=np.zeros(n_rng),
            bound_duals=np.zeros(0),
            objective=0.0,
            kkt_residual=0.0,
        )
        return QpSolution(**{**sol.__dict__, "kkt_residual": kkt_residual(problem, sol)})

    # catalog of one-sided inequality candidates, in deterministic order
    catalog = []
    pseudo_eq = []
    for j in range(n_rng):
        if problem.range_lo[j] == problem.range_hi[j]:
            pseudo_eq.append(j)
            continue
        if np.isfinite(problem.range_lo[j]):
            catalog.append(("range", j, "lo"))
        if np.isfinite(problem.range_hi[j]):
            catalog.append(("range", j, "hi"))
    for i in range(n):
        if np.isfinite(problem.lb[i]):
            catalog.append(("bound", i, "lo"))
        if np.isfinite(problem.ub[i]):
            catalog.append(("bound", i, "hi"))
    cat_pos = {entry: k for k, entry in enumerate(catalog)}

    eq_like_rows = problem.eq_rows
    eq_like_rhs = problem.eq_rhs
    if pseudo_eq:
        eq_like_rows = np.vstack([problem.eq_rows, problem.range_rows[pseudo_eq]])
        eq_like_rhs = np.concatenate([problem.eq_rhs, problem.range_lo[pseudo_eq]])

    def row_of(entry):
        kind, idx, _ = entry
        if kind == "range":
            return problem.range_rows[idx]
        row = np.zeros(n)
        row[idx] = 1.0
        return row

    def value_of(entry, x):
        kind, idx, _ = entry
        return (problem.range_rows[idx] @ x) if kind == "range" else x[idx]

    def bound_of(entry):
        kind, idx, side = entry
        if kind == "range":
            return problem.range_lo[idx] if side == "lo" else problem.range_hi[idx]
        return problem.lb[idx] if side == "lo" else problem.ub[idx]

    # --- starting point -----------------------------------------------------
    x = None
    seed_active: list = []
    if warm_start is not None:
        cand = _project_to_equalities(
            np.asarray(warm_start.primal, float), eq_like_rows, eq_like_rhs
        )
        if _feasible(problem, cand, max(tol, 1e-9)):
            x = np.clip(cand, problem.lb, problem.ub)
            for entry in warm_start.active:
                if entry in cat_pos and abs(value_of(entry, x) - bound_of(entry)) <= 1e-8:
                    seed_active.append(entry)
    if x is None:
        cand = _project_to_equalities(
            _midpoint(problem.lb, problem.ub), eq_like_rows, eq_like_rhs
        )
        if _feasible(problem, cand, max(tol, 1e-9)):
            x = cand
        else:
            raw = _phase1(problem, tol)
            x = _project_to_equalities(raw, eq_like_rows, eq_like_rhs)
            if not _feasible(problem, x, 1e-7):
                x = raw

    working: list = list(seed_active)
    n_eq_like = eq_like_rows.shape[0]
    grad_scale = 1.0 + float(np.max(np.abs(problem.gradient(x)))) if n else 1.0
    dual_tol = 1e-9 * grad_scale
    if max_iter is None:
        max_iter = max(500, 40 * (n + len(catalog) + 1))

    best_residual = np.inf
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        w_mat = eq_like_rows
        if working:
            w_mat = np.vstack([eq_like_rows] + [row_of(e) for e in working])
        g = problem.gradient(x)
        z = _null_space(w_mat, n)

        p = np.zeros(n)
        infinite_mode = False
        if z.shape[1]:
            hz = z.T @ (2.0 * problem.quadratic_diag[:, None] * z)
            gz = z.T @ g
            w_eig, u = np.linalg.eigh(hz)
            eig_tol = max(float(w_eig[-1]) if w_eig.size else 0.0, 1.0) * 1e-12
            pos = w_eig > eig_tol
            g_u = u.T @ gz
            flat = ~pos
            if np.any(flat) and np.max(np.abs(g_u[flat])) > dual_tol:
                dz = -(u[:, flat] @ g_u[flat])
                p = z @ dz
                # normalize so the ratio test sees a full-scale direction
                p /= np.max(np.abs(p))
                infinite_mode = True
            else:
                dz = np.zeros_like(gz)
                if np.any(pos):
                    dz = -(u[:, pos] @ (g_u[pos] / w_eig[pos]))
                p = z @ dz

        step_scale = 1.0 + float(np.max(np.abs(x)))
        if np.max(np.abs(p)) <= 1e-12 * step_scale:
            # stationary on the working set: check multiplier signs
            duals, *_ = np.linalg.lstsq(w_mat.T, g, rcond=None) if w_mat.size else (
                np.zeros(0),
                None,
                None,
                None,
            )
            violator = None
            for k, entry in enumerate(working):
                mu = duals[n_eq_like + k]
                _, _, side = entry
                bad = mu < -dual_tol if side == "lo" else mu > dual_tol
                if bad and (violator is None or cat_pos[entry] < cat_pos[violator]):
                    violator = entry
            if violator is None:
                return _finish(problem, x, duals, working, pseudo_eq, n_eq_like, iterations)
            working.remove(violator)
            continue

        # ratio test over candidates not in the working set
        alpha_cap = np.inf if infinite_mode else 1.0
        alpha_best = alpha_cap
        blocker = None
        in_working = set(working)
        for entry in catalog:
            if entry in in_working:
                continue
            kind, idx, side = entry
            d = value_of(entry, p)
            if side == "hi":
                if d <= 1e-14 * step_scale:
                    continue
                room = bound_of(entry) - value_of(entry, x)
            else:
                if d >= -1e-14 * step_scale:
                    continue
                room = bound_of(entry) - value_of(entry, x)
            alpha = room / d
            if alpha < -1e-9:
                alpha = 0.0
            alpha = max(alpha, 0.0)
            if alpha < alpha_best - 1e-13 * max(1.0, alpha_best):
                alpha_best = alpha
                blocker = entry
        if infinite_mode and blocker is None:
            raise QpUnboundedError("objective unbounded below on the feasible set")
        if blocker is not None and alpha_best < alpha_cap:
            x = x + alpha_best * p
            working.append(blocker)
        else:
            x = x + alpha_cap * p

    probe = QpSolution(
        primal=x,
        eq_duals=np.zeros(problem.eq_rows.shape[0]),
        range_duals=np.zeros(n_rng),
        bound_duals=np.zeros(n),
        objective=problem.objective(x),
        kkt_residual=np.inf,
    )
    best_residual = kkt_residual(problem, probe)
    raise QpIterationLimitError(
        f"active-set iteration limit {max_iter} reached", residual=best_residual
    )


def _finish(problem, x, duals, working, pseudo_eq, n_eq_like, iterations):
    n_eq = problem.eq_rows.shape[0]
    eq_duals = np.asarray(duals[:n_eq]) if duals.size else np.zeros(0)
    range_duals = np.zeros(problem.range_rows.shape[0])
    for k, j in enumerate(pseudo_eq):
        range_duals[j] = duals[n_eq + k]
    bound_duals = np.zeros(problem.num_vars)
    for k, (kind, idx, _) in enumerate(working):
        mu = float(duals[n_eq_like + k])
        if kind == "range":
            range_duals[idx] += mu
        else:
            bound_duals[idx] += mu
    sol = QpSolution(
        primal=x,
        eq_duals=eq_duals,
        range_duals=range_duals,
        bound_duals=bound_duals,
        objective=problem.objective(x),
        kkt_residual=0.0,
        active=tuple(working),
        iterations=iterations,
    )
    return QpSolution(**{**sol.__dict__, "kkt_residual": kkt_residual(problem, sol)})
