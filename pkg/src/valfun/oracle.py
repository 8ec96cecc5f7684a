"""Independent numerical oracles.

Everything here is deliberately simple and separate from the estimate
machinery: finite differences on the value function, a brute-force
rational LP solver, and solution-path tracking.  Tests compare the
analytic estimates against these; the implementations must not share
code with the paths they check.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from . import kernel
from .model import ParametricProblem

GRAD_STEP = 1e-5
HESS_STEP = 1e-3


class ValueEvaluator:
    """phi(x) evaluator with warm-started local solves for FD stencils.

    The first evaluation runs the full solve; later evaluations restart a
    local descent from each cached minimizer branch so that nearby stencil
    points stay on their branches.
    """

    def __init__(self, problem: ParametricProblem):
        self.problem = problem
        self._branches: list[np.ndarray] | None = None
        self._affine = problem.affine_in_y()

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._affine or kernel._pinned_minimizers(self.problem, x) is not None:
            return kernel.solve_value(self.problem, x).value
        if self._branches is None:
            res = kernel.solve_value(self.problem, x)
            self._branches = list(res.minimizers)
            return res.value
        best = None
        for y0 in self._branches:
            y = kernel.local_solve(self.problem, x, y0)
            if y is None:
                continue
            if self.problem.p and np.max(self.problem.eval_g(x, y)) > 1e-6:
                continue
            val = self.problem.eval_f(x, y)
            if best is None or val < best:
                best = val
        if best is None:
            res = kernel.solve_value(self.problem, x)
            best = res.value
        return float(best)


@dataclass
class FdReport:
    value: np.ndarray
    stable: bool
    spread: float
    step: float


def fd_gradient(problem: ParametricProblem, x, h: float = GRAD_STEP,
                consistency_tol: float = 1e-4) -> FdReport:
    """Central-difference gradient of phi with one Richardson halving.

    ``stable`` compares the h and h/2 estimates; an unstable report
    usually means x sits on a kink of the value function.
    """
    phi = ValueEvaluator(problem)
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def grad(step):
        out = np.zeros(x.shape[0])
        for j in range(x.shape[0]):
            e = np.zeros_like(x)
            e[j] = step
            out[j] = (phi(x + e) - phi(x - e)) / (2 * step)
        return out

    g1 = grad(h)
    g2 = grad(h / 2)
    spread = float(np.max(np.abs(g1 - g2), initial=0.0))
    rich = (4.0 * g2 - g1) / 3.0
    return FdReport(value=rich, stable=spread <= consistency_tol, spread=spread, step=h)


def fd_directional(problem: ParametricProblem, x, d, h: float = GRAD_STEP,
                   consistency_tol: float = 1e-4) -> FdReport:
    """One-sided directional derivative phi'(x; d), Richardson-extrapolated.

    One-sided stencils see the correct one-sided slope at kinks, which is
    what the support-function comparisons need.
    """
    phi = ValueEvaluator(problem)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    base = phi(x)

    def slope(step):
        return (phi(x + step * d) - base) / step

    s1 = slope(h)
    s2 = slope(h / 2)
    spread = abs(s1 - s2)
    rich = 2.0 * s2 - s1
    return FdReport(value=np.array([rich]), stable=spread <= consistency_tol,
                    spread=spread, step=h)


def fd_hessian(problem: ParametricProblem, x, h: float = HESS_STEP,
               consistency_tol: float = 1e-2) -> FdReport:
    """Central second differences with one halving level."""
    phi = ValueEvaluator(problem)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]

    def hess(step):
        H = np.zeros((n, n))
        f0 = phi(x)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = step
            H[i, i] = (phi(x + ei) - 2 * f0 + phi(x - ei)) / step**2
        for i in range(n):
            for j in range(i + 1, n):
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = step
                ej[j] = step
                H[i, j] = (
                    phi(x + ei + ej) - phi(x + ei - ej) - phi(x - ei + ej) + phi(x - ei - ej)
                ) / (4 * step**2)
                H[j, i] = H[i, j]
        return H

    H1 = hess(h)
    H2 = hess(h / 2)
    spread = float(np.max(np.abs(H1 - H2), initial=0.0))
    rich = (4.0 * H2 - H1) / 3.0
    return FdReport(value=rich, stable=spread <= consistency_tol, spread=spread, step=h)


# ---------------------------------------------------------------------------
# Rational brute-force LP oracle
# ---------------------------------------------------------------------------


def _frac(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


def _solve_square_exact(A_rows, b):
    """Gaussian elimination over Fractions; None when singular."""
    k = len(A_rows)
    M = [list(map(_frac, row)) + [_frac(b[i])] for i, row in enumerate(A_rows)]
    for col in range(k):
        piv = None
        for r in range(col, k):
            if M[r][col] != 0:
                piv = r
                break
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        pv = M[col][col]
        M[col] = [v / pv for v in M[col]]
        for r in range(k):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [vr - f * vc for vr, vc in zip(M[r], M[col])]
    return [M[i][k] for i in range(k)]


def lp_value_oracle(problem: ParametricProblem, x):
    """Exact minimum of the inner problem over all basic feasible points.

    Brute force: every m-subset of constraint rows is solved as an active
    set and checked for feasibility.  Requires the problem to be affine
    in y with a pointed feasible set; data is extracted by direct
    evaluation (finite second differences are zero for affine forms), not
    through the derivative trees, so this is an independent route.

    Returns (value, argmins) as exact Fractions, or (None, []) when no
    basic feasible point exists.
    """
    m, p = problem.m, problem.p
    xq = [_frac(v) for v in np.atleast_1d(x)]
    zero = [Fraction(0)] * m

    def unit(j):
        e = [Fraction(0)] * m
        e[j] = Fraction(1)
        return e

    f0 = _frac(problem.eval_expr(problem.f, xq, zero))
    c = [_frac(problem.eval_expr(problem.f, xq, unit(j))) - f0 for j in range(m)]
    g0 = [_frac(v) for v in problem.eval_g_exact(xq, zero)]
    A = [
        [_frac(problem.eval_expr(problem.g[i], xq, unit(j))) - g0[i] for j in range(m)]
        for i in range(p)
    ]
    b = [-v for v in g0]

    best, argmins = None, []
    for J in combinations(range(p), m):
        sol = _solve_square_exact([A[i] for i in J], [b[i] for i in J])
        if sol is None:
            continue
        feasible = all(
            sum(A[i][j] * sol[j] for j in range(m)) <= b[i] for i in range(p)
        )
        if not feasible:
            continue
        val = f0 + sum(cj * sj for cj, sj in zip(c, sol))
        if best is None or val < best:
            best, argmins = val, [sol]
        elif val == best and sol not in argmins:
            argmins.append(sol)
    return best, argmins


# ---------------------------------------------------------------------------
# Solution tracking and graph probing
# ---------------------------------------------------------------------------


@dataclass
class TrackResult:
    ts: list[float]
    ys: list[np.ndarray]
    us: list[np.ndarray]
    truncated: bool
    reason: str = ""


def track_solution(problem: ParametricProblem, xbar, d, steps: int = 3,
                   h: float = 1e-5, jump_tol: float = 0.1) -> TrackResult:
    """Follow a minimizer branch along x = xbar + t d for t in +/- k h.

    Walks outward from the base solve, warm-starting each step from its
    neighbor.  Stops and flags truncation when the active set changes or
    the minimizer jumps by more than ``jump_tol`` between steps.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    base = kernel.solve_value(problem, xbar)
    y0 = base.minimizers[0]
    u0 = _nearest_multiplier(problem, xbar, y0, None)
    base_active = _active_set(problem, xbar, y0)

    ts, ys, us = [0.0], [y0], [u0]
    truncated, reason = False, ""
    for sign in (1.0, -1.0):
        prev_y = y0
        for k in range(1, steps + 1):
            t = sign * k * h
            x = xbar + t * d
            y = _resolve(problem, x, prev_y)
            if y is None:
                truncated, reason = True, "local solve failed"
                break
            if np.max(np.abs(y - prev_y), initial=0.0) > jump_tol:
                truncated, reason = True, "minimizer jump"
                break
            if _active_set(problem, x, y) != base_active:
                truncated, reason = True, "active-set change"
                break
            u = _nearest_multiplier(problem, x, y, us[-1])
            ts.append(t)
            ys.append(y)
            us.append(u)
            prev_y = y
        if truncated:
            break
    order = np.argsort(ts)
    return TrackResult(
        ts=[ts[i] for i in order],
        ys=[ys[i] for i in order],
        us=[us[i] for i in order],
        truncated=truncated,
        reason=reason,
    )


def _resolve(problem, x, y0):
    if problem.affine_in_y() and problem.y_box is None:
        res = kernel.solve_value(problem, x)
        # pick the minimizer closest to the previous one
        return min(res.minimizers, key=lambda y: float(np.max(np.abs(y - y0), initial=0.0)))
    y = kernel.local_solve(problem, x, y0)
    if y is None:
        return None
    if problem.p and np.max(problem.eval_g(x, y)) > 1e-6:
        return None
    return y


def _active_set(problem, x, y, tol: float = 1e-6):
    if problem.p == 0:
        return ()
    g = problem.eval_g(x, y)
    return tuple(i for i in range(problem.p) if g[i] >= -tol)


def _nearest_multiplier(problem, x, y, u_prev):
    mp = kernel.multipliers(problem, x, y)
    if not mp.vertices:
        return np.full(problem.p, np.nan)
    if u_prev is None or not np.all(np.isfinite(u_prev)):
        return mp.vertices[0]
    return min(mp.vertices, key=lambda u: float(np.max(np.abs(u - u_prev), initial=0.0)))


def fd_solution_jacobian(problem: ParametricProblem, xbar, h: float = 1e-5):
    """FD Jacobians of the minimizer and multiplier maps along coordinate
    directions.  Returns (ds, du, ok); ok is False when any directional
    track truncated (kink or branch change)."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    n = xbar.shape[0]
    m, p = problem.m, problem.p
    ds = np.zeros((m, n))
    du = np.zeros((p, n))
    ok = True
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        tr = track_solution(problem, xbar, e, steps=1, h=h)
        if tr.truncated or len(tr.ts) < 3:
            ok = False
            continue
        y_minus, y_plus = tr.ys[0], tr.ys[-1]
        u_minus, u_plus = tr.us[0], tr.us[-1]
        ds[:, j] = (y_plus - y_minus) / (2 * h)
        if p and np.all(np.isfinite(u_minus)) and np.all(np.isfinite(u_plus)):
            du[:, j] = (u_plus - u_minus) / (2 * h)
    return ds, du, ok


def graph_probe(problem: ParametricProblem, kind: str, base_x, radius: float = 1e-3,
                count: int = 20, seed: int = 0):
    """Sample graph points of the solution-side maps near a parameter.

    kind "S": tuples (x, y) with y a minimizer at x.
    kind "lambda": tuples (x, y, u) with u a multiplier vertex at (x, y).
    kind "phi": tuples (x, phi(x)).
    """
    rng = np.random.default_rng(seed)
    base_x = np.atleast_1d(np.asarray(base_x, dtype=float))
    out = []
    for _ in range(count):
        delta = rng.uniform(-radius, radius, size=base_x.shape[0])
        x = base_x + delta
        try:
            res = kernel.solve_value(problem, x)
        except Exception:
            continue
        if kind == "phi":
            out.append((x, res.value))
            continue
        for y in res.minimizers:
            if kind == "S":
                out.append((x, y))
            elif kind == "lambda":
                mp = kernel.multipliers(problem, x, y)
                for u in mp.vertices:
                    out.append((x, y, u))
            else:
                raise ValueError(f"unknown probe kind {kind!r}")
    return out
