"""Brute-force QP oracle: enumerate candidate active sets and solve each
equality-constrained KKT system directly.

Stays independent of the production solver: every subproblem is a dense
linear solve of the stationarity plus pinned-constraint system, feasibility
and multiplier signs are checked explicitly, and the best feasible KKT
point wins. Only usable for small problems.
"""

import itertools

import numpy as np


class OracleResult:
    def __init__(self, primal, eq_duals, range_duals, bound_duals, objective,
                 degenerate):
        self.primal = primal
        self.eq_duals = eq_duals
        self.range_duals = range_duals
        self.bound_duals = bound_duals
        self.objective = objective
        self.degenerate = degenerate


def enumerate_qp(problem, tol=1e-9):
    """Globally solve a small convex QP by active-set enumeration.

    Returns an :class:`OracleResult` or None when no KKT point is found
    (infeasible/unbounded inputs are outside this oracle's scope).
    ``degenerate`` is set when distinct active sets tie in objective with
    different primal or dual vectors, or when an optimal active constraint
    carries a (near) zero multiplier.
    """
    n = problem.num_vars
    h = 2.0 * np.asarray(problem.quadratic_diag)
    c = np.asarray(problem.linear_cost)
    a_eq = problem.eq_rows
    n_eq = a_eq.shape[0]

    # per-constraint states: ranges and two-sided bounds have three states
    groups = []
    for j in range(problem.range_rows.shape[0]):
        states = [None]
        if np.isfinite(problem.range_lo[j]):
            states.append(("range", j, "lo"))
        if np.isfinite(problem.range_hi[j]):
            states.append(("range", j, "hi"))
        groups.append(states)
    for i in range(n):
        states = [None]
        if np.isfinite(problem.lb[i]):
            states.append(("bound", i, "lo"))
        if np.isfinite(problem.ub[i]):
            states.append(("bound", i, "hi"))
        groups.append(states)

    def row_bound(entry):
        kind, idx, side = entry
        if kind == "range":
            row = problem.range_rows[idx]
            val = problem.range_lo[idx] if side == "lo" else problem.range_hi[idx]
        else:
            row = np.zeros(n)
            row[idx] = 1.0
            val = problem.lb[idx] if side == "lo" else problem.ub[idx]
        return row, val

    def feasible(x):
        if n_eq and np.max(np.abs(a_eq @ x - problem.eq_rhs)) > 1e-7:
            return False
        if problem.range_rows.shape[0]:
            vals = problem.range_rows @ x
            if np.any(vals < problem.range_lo - 1e-7):
                return False
            if np.any(vals > problem.range_hi + 1e-7):
                return False
        return not (
            np.any(x < problem.lb - 1e-7) or np.any(x > problem.ub + 1e-7)
        )

    candidates = []
    for combo in itertools.product(*groups):
        active = [e for e in combo if e is not None]
        k = len(active)
        if n_eq + k > n:
            continue
        rows = np.array([row_bound(e)[0] for e in active]).reshape(k, n)
        vals = np.array([row_bound(e)[1] for e in active])
        dim = n + n_eq + k
        kkt = np.zeros((dim, dim))
        kkt[:n, :n] = np.diag(h)
        rhs = np.zeros(dim)
        rhs[:n] = -c
        if n_eq:
            kkt[:n, n : n + n_eq] = -a_eq.T
            kkt[n : n + n_eq, :n] = a_eq
            rhs[n : n + n_eq] = problem.eq_rhs
        if k:
            kkt[:n, n + n_eq :] = -rows.T
            kkt[n + n_eq :, :n] = rows
            rhs[n + n_eq :] = vals
        sol, residual, rank, _ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if np.max(np.abs(kkt @ sol - rhs)) > 1e-7:
            continue
        x = sol[:n]
        lam = sol[n : n + n_eq]
        mus = sol[n + n_eq :]
        ok = True
        for e, mu in zip(active, mus):
            if e[2] == "lo" and mu < -tol:
                ok = False
            if e[2] == "hi" and mu > tol:
                ok = False
        if not ok or not feasible(x):
            continue
        obj = problem.objective(x)
        range_duals = np.zeros(problem.range_rows.shape[0])
        bound_duals = np.zeros(n)
        for e, mu in zip(active, mus):
            kind, idx, _ = e
            if kind == "range":
                range_duals[idx] += mu
            else:
                bound_duals[idx] += mu
        weak = any(abs(mu) < 1e-7 for mu in mus)
        candidates.append((obj, x, lam, range_duals, bound_duals, weak))

    if not candidates:
        return None
    candidates.sort(key=lambda t: t[0])
    best = candidates[0]
    degenerate = best[5]
    for other in candidates[1:]:
        if other[0] > best[0] + 1e-8 * (1 + abs(best[0])):
            break
        if (
            np.max(np.abs(other[1] - best[1])) > 1e-6
            or (best[2].size and np.max(np.abs(other[2] - best[2])) > 1e-5)
            or np.max(np.abs(other[3] - best[3])) > 1e-5
            or np.max(np.abs(other[4] - best[4])) > 1e-5
        ):
            degenerate = True
    return OracleResult(best[1], best[2], best[3], best[4], best[0], degenerate)


def random_problem(rng, max_vars=12):
    """Random feasible convex QP built around a known interior point."""
    from linlmp.qpsolver import QpProblem

    n = int(rng.integers(2, max_vars + 1))
    quad = rng.uniform(0.2, 2.0, n)
    if rng.random() < 0.3:
        quad[rng.integers(0, n)] = 0.0
    lin = rng.uniform(-2.0, 2.0, n)
    x_bar = rng.normal(0.0, 1.0, n)

    n_eq = int(rng.integers(0, min(3, n - 1) + 1))
    eq_rows = rng.normal(0.0, 1.0, (n_eq, n))
    eq_rhs = eq_rows @ x_bar

    n_rng = int(rng.integers(1, 4))
    rng_rows = rng.normal(0.0, 1.0, (n_rng, n))
    vals = rng_rows @ x_bar
    lo = vals - rng.uniform(0.0, 2.0, n_rng)
    hi = vals + rng.uniform(0.0, 2.0, n_rng)

    # keep every zero-curvature direction boxed so the QP stays bounded,
    # and cap the boxed count to keep the enumeration cheap
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    boxed = set(np.flatnonzero(quad == 0.0))
    extras = [i for i in rng.permutation(n) if i not in boxed]
    boxed.update(extras[: max(0, 3 - len(boxed))])
    for i in boxed:
        lb[i] = x_bar[i] - rng.uniform(0.5, 3.0)
        ub[i] = x_bar[i] + rng.uniform(0.5, 3.0)

    return QpProblem(
        num_vars=n,
        quadratic_diag=quad,
        linear_cost=lin,
        eq_rows=eq_rows,
        eq_rhs=eq_rhs,
        range_rows=rng_rows,
        range_lo=lo,
        range_hi=hi,
        lb=lb,
        ub=ub,
    )
