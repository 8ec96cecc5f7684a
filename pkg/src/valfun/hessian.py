"""Second-order sensitivity of the optimal value function.

The value function of the inner minimization is rarely twice
differentiable; what this module computes are outer estimates of its
generalized Hessian, i.e. of the coderivative of the first-order map at
a chosen base gradient.  A query fixes the parameter ``xbar``, a base
gradient ``xund`` (a point of the first-order set there), and an outer
covector ``xstar``; the answer is a finite union of affine images of
polyhedra in parameter space.

Cases, by structure of the problem at the query point:

* ``unperturbed``     constraints free of x; the first-order map is built
                      from objective gradients at minimizers.
* ``single-single``   unique minimizer and unique multiplier; smooth
                      sensitivity when the KKT system is regular, the
                      composed branch estimate otherwise.
* ``single-s``        unique minimizer, multiplier set a polytope.
* ``single-lambda``   several minimizers, one multiplier each.
* ``lp-lhs``          linear program whose cost vector is the parameter;
                      exact rational arithmetic end to end.
* ``lp-lhs-rhs``      linear program whose right-hand side is the
                      parameter (optionally also the cost); exact.

``route`` picks a case from problem structure, ``compute`` runs the
query end to end including the first-order membership precheck.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import firstorder, kernel
from .coderiv import (
    DEFAULT_BRANCH_CAP,
    FiniteGeneratorMap,
    branch_family,
    build_branch_family,
    coderivative_S,
    hull_coderivative,
)
from .errors import (
    CaseRoutingError,
    DegeneracyError,
    HypothesisError,
)
from .model import (
    DEFAULT_TOL_ACT,
    Const,
    KktPoint,
    ParametricProblem,
    Partition,
    Var,
    classify,
    differentiate,
    kkt_residual,
    verify_concave_convex,
)
from .reporting import (
    ASSERTED,
    ASSUMED,
    FAILED,
    NOT_CHECKED,
    VERIFIED,
    HypothesisRecord,
)
from .setcalc import MemberVerdict, Piece, Polyhedron, PolySet

SELECTION_TOL = 1e-6
MEMBERSHIP_TOL = 1e-6
COND_CAP = 1e10

CASES = (
    "auto",
    "unperturbed",
    "single-single",
    "single-s",
    "single-lambda",
    "lp-lhs",
    "lp-lhs-rhs",
)


def _vec(v):
    arr = np.asarray(v)
    if arr.dtype != object:
        arr = np.asarray(arr, dtype=float)
    return np.atleast_1d(arr)


def _fvec(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass
class HessianQuery:
    """A single second-order query: parameter point, base gradient, and
    outer covector, plus the requested case ('auto' to dispatch)."""

    xbar: np.ndarray
    xund: np.ndarray
    xstar: np.ndarray
    case: str = "auto"

    def __post_init__(self):
        self.xbar = _vec(self.xbar)
        self.xund = _vec(self.xund)
        self.xstar = _vec(self.xstar)
        if not (self.xbar.shape == self.xund.shape == self.xstar.shape):
            raise ValueError("xbar, xund, xstar must have equal lengths")
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; choose from {CASES}")


@dataclass
class HessianEstimate:
    query: HessianQuery
    case: str
    theorem: str
    result: PolySet
    hypotheses: list[HypothesisRecord] = field(default_factory=list)
    equality: bool = False
    exact: bool = False
    under_enumerated: bool = False
    supports: list[str] | None = None

    def member(self, vec, tol: float = MEMBERSHIP_TOL) -> MemberVerdict:
        return self.result.member(vec, tol)

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "theorem": self.theorem,
            "xbar": [float(v) for v in self.query.xbar],
            "xund": [float(v) for v in self.query.xund],
            "xstar": [float(v) for v in self.query.xstar],
            "equality": self.equality,
            "exact": self.exact,
            "under_enumerated": self.under_enumerated,
            "supports": self.supports,
            "hypotheses": [h.to_json() for h in self.hypotheses],
            "set": self.result.to_json(),
        }


# ---------------------------------------------------------------------------
# Smooth sensitivity: tangents of the solution and multiplier maps
# ---------------------------------------------------------------------------


@dataclass
class SensitivityResult:
    ds: np.ndarray  # m x n solution tangent
    du: np.ndarray  # p x n multiplier tangent
    residual: float
    cond: float


def sensitivity_system(problem: ParametricProblem, kkt: KktPoint) -> SensitivityResult:
    """Tangents of the solution and multiplier maps at a regular KKT point.

    Solves the linearized KKT system

        [ Lyy        gy^T   ] [ds]     [ Lyx        ]
        [ diag(u) gy diag(g)] [du] = - [ diag(u) gx ]

    and requires strict complementarity (no activity/multiplier ties),
    linear independence of active gradients, and condition number below
    1e10; otherwise raises DegeneracyError.
    """
    part = kkt.partition
    if part.theta or part.ambiguous:
        raise DegeneracyError(
            f"strict complementarity fails: zero-multiplier active indices "
            f"{sorted(set(part.theta) | set(part.ambiguous))}"
        )
    licq = kernel.check_licq(problem, kkt.x, kkt.y)
    if not licq.holds:
        raise DegeneracyError(
            f"active constraint gradients are dependent (rank {licq.rank} "
            f"of {len(licq.active)})"
        )
    lag = differentiate(problem, kkt.x, kkt.y, kkt.u)
    m, p, n = problem.m, problem.p, problem.n
    K = np.zeros((m + p, m + p))
    K[:m, :m] = lag.Lyy
    if p:
        K[:m, m:] = lag.gy.T
        K[m:, :m] = np.diag(kkt.u) @ lag.gy
        K[m:, m:] = np.diag(lag.g_values)
    rhs = -np.vstack([lag.Lyx, (np.diag(kkt.u) @ lag.gx) if p else np.zeros((0, n))])
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond >= COND_CAP:
        raise DegeneracyError(f"KKT system condition {cond:.2e} exceeds {COND_CAP:.0e}")
    X = np.linalg.solve(K, rhs)
    residual = float(np.max(np.abs(K @ X - rhs))) if X.size else 0.0
    return SensitivityResult(ds=X[:m], du=X[m:], residual=residual, cond=float(cond))


def _kkt_at(problem, x, y, u, tol_act: float = DEFAULT_TOL_ACT) -> KktPoint:
    x = _fvec(x)
    y = _fvec(y)
    u = np.atleast_1d(np.asarray(u, dtype=float)) if problem.p else np.zeros(0)
    return KktPoint(
        x=x,
        y=y,
        u=u,
        partition=classify(problem, x, y, u, tol_act),
        kkt_residual=kkt_residual(problem, x, y, u),
    )


def _minimizer_list(problem, xbar, minimizers):
    if minimizers is not None:
        return [_fvec(y) for y in minimizers], False
    res = kernel.solve_value(problem, xbar)
    return res.minimizers, res.under_enumerated


# ---------------------------------------------------------------------------
# The composed estimate: multiplier-map branches chained with a
# realization of the scalarized solution-map derivative
# ---------------------------------------------------------------------------


def _solution_realizer(problem, xbar, ybar, mult_vertices, flavor, branch_cap, ds=None):
    """How to realize directional derivatives of the solution map.

    Returns ("jacobian", ds) when a solution tangent is available (given
    or computed from a regular KKT system), else ("coderiv", inner) with
    the zero-covector branch families at every multiplier vertex, for the
    product-space composition.
    """
    if ds is not None:
        return ("jacobian", np.asarray(ds, dtype=float))
    for u in mult_vertices:
        try:
            sens = sensitivity_system(problem, _kkt_at(problem, xbar, ybar, u))
            return ("jacobian", sens.ds)
        except DegeneracyError:
            continue
    inner = []
    for u in mult_vertices:
        kkt = _kkt_at(problem, xbar, ybar, u)
        fam = branch_family(problem, kkt, np.zeros(problem.p), flavor, branch_cap)
        inner.append((fam, differentiate(problem, xbar, ybar, u)))
    return ("coderiv", inner)


def _compose_pieces(problem, xbar, ybar, u, xstar, realizer, flavor, branch_cap, tag):
    """Pieces of  Lxx x* + zeta_x + D<zeta_y + Lyx x*, s>  where zeta runs
    over the multiplier-map branch images at input covector gx x*.

    With a solution tangent the inner term is affine in zeta; otherwise
    each inner branch family is chained in product space with the linking
    equality that the inner covector match -(zeta_y + Lyx x*).
    """
    lag = differentiate(problem, xbar, ybar, u)
    n = problem.n
    kkt = _kkt_at(problem, xbar, ybar, u)
    ustar_in = lag.gx @ xstar if problem.p else np.zeros(0)
    fam = branch_family(problem, kkt, ustar_in, flavor, branch_cap)
    Mx = np.hstack([lag.Lxy, lag.gx.T])
    My = np.hstack([lag.Lyy, lag.gy.T])
    base = lag.Lxx @ xstar
    v_const = lag.Lyx @ xstar
    pieces = []
    kind = realizer[0]
    if kind == "jacobian":
        ds = realizer[1]
        A = Mx + ds.T @ My
        off = base + ds.T @ v_const
        for br in fam.branches:
            pieces.append(Piece(br.poly, A, off, f"{tag}[{br.label}]"))
    elif kind == "coderiv":
        for br in fam.branches:
            for k2, (fam2, lag2) in enumerate(realizer[1]):
                Mx2 = np.hstack([lag2.Lxy, lag2.gx.T])
                My2 = np.hstack([lag2.Lyy, lag2.gy.T])
                for br2 in fam2.branches:
                    prod = br.poly.product(br2.poly)
                    prod = prod.with_eqs(np.hstack([My, My2]), -v_const)
                    pieces.append(
                        Piece(
                            prod,
                            np.hstack([Mx, Mx2]),
                            base,
                            f"{tag}[{br.label}|u{k2}:{br2.label}]",
                        )
                    )
    else:  # "fd": a bag of finite-difference solution Jacobians
        for j, J in enumerate(realizer[1]):
            A = Mx + J.T @ My
            off = base + J.T @ v_const
            for br in fam.branches:
                pieces.append(Piece(br.poly, A, off, f"{tag}-fd{j}[{br.label}]"))
    return pieces


# ---------------------------------------------------------------------------
# Case: unperturbed feasible set (constraints free of x)
# ---------------------------------------------------------------------------


def _unperturbed_point_estimate(problem, xbar, xstar, y, flavor, branch_cap, hyps):
    """Estimate contribution of one minimizer: fxx x* plus a realization
    of the derivative of x -> grad_x f(x, s(x)) through the local
    solution branch."""
    lag0 = differentiate(problem, xbar, y, np.zeros(problem.p))
    base = lag0.Lxx @ xstar
    v = lag0.Lyx @ xstar
    mult = kernel.multipliers(problem, xbar, y)
    if mult.empty:
        raise HypothesisError("no multiplier exists at a minimizer; MFCQ fails there")
    for u in mult.vertices:
        try:
            sens = sensitivity_system(problem, _kkt_at(problem, xbar, y, u))
            pt = base + sens.ds.T @ v
            return PolySet.from_point(pt, "unperturbed-smooth"), True
        except DegeneracyError:
            continue
    hyps.append(
        HypothesisRecord(
            "smooth-solution-branch",
            FAILED,
            "KKT system degenerate at the minimizer; composed estimate used",
        )
    )
    est = coderivative_S(problem, xbar, y, v, flavor, branch_cap)
    hyps.extend(est.hypotheses)
    return est.result.map(np.eye(problem.n), base), False


def hessian_unperturbed(
    problem: ParametricProblem,
    query: HessianQuery,
    minimizers=None,
    smode: str = "auto",
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> HessianEstimate:
    """Second-order estimate when the feasible set does not move with x.

    Sub-modes: "single" (one minimizer, smooth or composed), "multi"
    (union over the minimizers whose objective gradient matches the base
    gradient), "caratheodory" (hull treatment with supports of at most
    n+1 minimizers, for base gradients strictly inside the hull).
    """
    if not problem.constraints_x_free():
        raise CaseRoutingError("unperturbed case requires constraints free of x")
    xbar, xund, xstar = _fvec(query.xbar), _fvec(query.xund), _fvec(query.xstar)
    n = problem.n
    mins, under = _minimizer_list(problem, xbar, minimizers)
    if not mins:
        raise HypothesisError("no minimizer available at xbar")
    hyps = [
        HypothesisRecord(
            "minimizer-enumeration",
            ASSUMED if under else VERIFIED,
            f"{len(mins)} minimizer(s), "
            + ("heuristic search" if under else "exact/pinned"),
        )
    ]
    grads = [problem.grad_x_f(xbar, y) for y in mins]
    sel = [
        k
        for k, bk in enumerate(grads)
        if float(np.max(np.abs(bk - xund))) <= SELECTION_TOL
    ]
    if smode == "auto":
        if len(mins) == 1:
            smode = "single"
        elif sel:
            smode = "multi"
        else:
            smode = "caratheodory"

    if smode == "single":
        result, smooth = _unperturbed_point_estimate(
            problem, xbar, xstar, mins[0], flavor, branch_cap, hyps
        )
        return HessianEstimate(
            query=query,
            case="unperturbed",
            theorem="unperturbed-smooth" if smooth else "unperturbed-composed",
            result=result,
            hypotheses=hyps,
            equality=smooth,
            under_enumerated=under,
        )

    if smode == "multi":
        if not sel:
            raise HypothesisError(
                "base gradient matches no minimizer's objective gradient; "
                "use the hull mode for interior base gradients"
            )
        hyps.append(
            HypothesisRecord(
                "gradient-selection",
                VERIFIED,
                f"{len(sel)} of {len(mins)} minimizers match the base gradient",
            )
        )
        result = PolySet.empty(n)
        smooth_all = True
        for k in sel:
            part, smooth = _unperturbed_point_estimate(
                problem, xbar, xstar, mins[k], flavor, branch_cap, hyps
            )
            smooth_all = smooth_all and smooth
            result = result.union(part)
        return HessianEstimate(
            query=query,
            case="unperturbed",
            theorem="unperturbed-selection",
            result=result,
            hypotheses=hyps,
            equality=False,
            under_enumerated=under,
        )

    if smode != "caratheodory":
        raise ValueError(f"unknown unperturbed sub-mode {smode!r}")

    frozen_logged = []

    def _gen_coderiv(k, w):
        w = _fvec(w)
        lagk = differentiate(problem, xbar, mins[k], np.zeros(problem.p))
        mult = kernel.multipliers(problem, xbar, mins[k])
        for u in mult.vertices:
            try:
                sens = sensitivity_system(problem, _kkt_at(problem, xbar, mins[k], u))
                return PolySet.from_point(
                    lagk.Lxx @ w + sens.ds.T @ (lagk.Lyx @ w), f"gen{k}"
                )
            except DegeneracyError:
                continue
        if k not in frozen_logged:
            frozen_logged.append(k)
        return PolySet.from_point(lagk.Lxx @ w, f"gen{k}-frozen")

    gen_map = FiniteGeneratorMap(generators=grads, coderiv=_gen_coderiv, target_dim=n)
    est = hull_coderivative(gen_map, xund, xstar, qualification="check")
    hyps.extend(est.hypotheses)
    hyps.append(
        HypothesisRecord(
            "generator-stability",
            ASSUMED,
            "minimizer branches treated as a locally fixed generator family",
        )
    )
    if frozen_logged:
        hyps.append(
            HypothesisRecord(
                "frozen-minimizer-generators",
                ASSUMED,
                f"no solution tangent at minimizers {frozen_logged}; "
                "their generators were differentiated with the minimizer frozen",
            )
        )
    supports = sorted({pc.provenance.split("|")[0] for pc in est.result.pieces})
    return HessianEstimate(
        query=query,
        case="unperturbed",
        theorem="unperturbed-hull",
        result=est.result,
        hypotheses=hyps,
        equality=False,
        under_enumerated=under,
        supports=supports,
    )


# ---------------------------------------------------------------------------
# Case: unique minimizer, unique multiplier
# ---------------------------------------------------------------------------


def hessian_single_single(
    problem: ParametricProblem,
    query: HessianQuery,
    minimizers=None,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> HessianEstimate:
    """Unique minimizer and multiplier: the generalized Hessian is the
    single matrix  Lxx + ds^T Lyx + du^T gx  applied to xstar whenever
    the KKT system is regular; otherwise the composed branch estimate
    with the same multiplier."""
    xbar, xstar = _fvec(query.xbar), _fvec(query.xstar)
    mins, under = _minimizer_list(problem, xbar, minimizers)
    if not mins:
        raise HypothesisError("no minimizer available at xbar")
    ybar = mins[0]
    hyps = [
        HypothesisRecord(
            "solution-single-valued",
            VERIFIED if len(mins) == 1 else FAILED,
            f"{len(mins)} minimizer(s) found (pointwise check)",
        )
    ]
    mult = kernel.multipliers(problem, xbar, ybar)
    if mult.empty:
        raise HypothesisError("no multiplier exists at (xbar, ybar)")
    hyps.append(
        HypothesisRecord(
            "multiplier-single-valued",
            VERIFIED if mult.is_singleton() else FAILED,
            f"{len(mult.vertices)} multiplier vertex(es)",
        )
    )
    u = mult.vertices[0]
    kkt = _kkt_at(problem, xbar, ybar, u)
    try:
        sens = sensitivity_system(problem, kkt)
        lag = differentiate(problem, xbar, ybar, u)
        H = lag.Lxx + sens.ds.T @ lag.Lyx + (sens.du.T @ lag.gx if problem.p else 0.0)
        hyps.append(
            HypothesisRecord(
                "kkt-system-regular",
                VERIFIED,
                f"condition {sens.cond:.2e}, residual {sens.residual:.2e}",
            )
        )
        return HessianEstimate(
            query=query,
            case="single-single",
            theorem="single-single-smooth",
            result=PolySet.from_point(H @ xstar, "single-single"),
            hypotheses=hyps,
            equality=True,
            under_enumerated=under,
        )
    except DegeneracyError as exc:
        hyps.append(HypothesisRecord("kkt-system-regular", FAILED, str(exc)))
    realizer = _solution_realizer(problem, xbar, ybar, [u], flavor, branch_cap)
    mfcq = kernel.check_mfcq(problem, xbar, ybar)
    hyps.append(HypothesisRecord("mfcq", VERIFIED if mfcq.holds else FAILED))
    pieces = _compose_pieces(
        problem, xbar, ybar, u, xstar, realizer, flavor, branch_cap, "ss"
    )
    return HessianEstimate(
        query=query,
        case="single-single",
        theorem="single-single-composed",
        result=PolySet(problem.n, pieces),
        hypotheses=hyps,
        equality=False,
        under_enumerated=under,
    )


# ---------------------------------------------------------------------------
# Case: unique minimizer, polyhedral multiplier set
# ---------------------------------------------------------------------------


def hessian_single_s(
    problem: ParametricProblem,
    query: HessianQuery,
    minimizers=None,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
    solution_jacobian=None,
) -> HessianEstimate:
    """Single-valued solution map with a multiplier polytope: union over
    multiplier vertices of the composed branch estimates.

    ``solution_jacobian`` supplies a known solution tangent (m x n) when
    the solution happens to be differentiable despite degenerate
    multipliers; otherwise the inner derivative is realized through the
    zero-covector branch families.
    """
    xbar, xstar = _fvec(query.xbar), _fvec(query.xstar)
    mins, under = _minimizer_list(problem, xbar, minimizers)
    if not mins:
        raise HypothesisError("no minimizer available at xbar")
    hyps = [
        HypothesisRecord(
            "solution-single-valued",
            VERIFIED if len(mins) == 1 else FAILED,
            f"{len(mins)} minimizer(s) found (pointwise check)",
        )
    ]
    pieces = []
    for k, ybar in enumerate(mins):
        mfcq = kernel.check_mfcq(problem, xbar, ybar)
        hyps.append(
            HypothesisRecord(
                f"mfcq[y{k}]", VERIFIED if mfcq.holds else FAILED
            )
        )
        if not mfcq.holds:
            raise HypothesisError("MFCQ fails at a minimizer")
        mult = kernel.multipliers(problem, xbar, ybar)
        if mult.empty:
            raise HypothesisError("no multiplier exists at a minimizer")
        if not mult.bounded:
            hyps.append(HypothesisRecord(f"bounded-multipliers[y{k}]", FAILED))
        if not mult.is_singleton():
            hyps.append(
                HypothesisRecord(
                    f"multiplier-vertex-union[y{k}]",
                    ASSUMED,
                    f"union over {len(mult.vertices)} polytope vertices only",
                )
            )
        realizer = _solution_realizer(
            problem, xbar, ybar, mult.vertices, flavor, branch_cap,
            ds=solution_jacobian,
        )
        for j, u in enumerate(mult.vertices):
            pieces.extend(
                _compose_pieces(
                    problem, xbar, ybar, u, xstar, realizer, flavor, branch_cap,
                    f"sS[y{k}u{j}]",
                )
            )
    return HessianEstimate(
        query=query,
        case="single-s",
        theorem="single-s-composed",
        result=PolySet(problem.n, pieces),
        hypotheses=hyps,
        equality=False,
        under_enumerated=under,
    )


# ---------------------------------------------------------------------------
# Case: several minimizers, one multiplier each
# ---------------------------------------------------------------------------


def hessian_single_lambda(
    problem: ParametricProblem,
    query: HessianQuery,
    minimizers=None,
    mode: str = "auto",
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> HessianEstimate:
    """Multiple minimizers with unique multipliers.

    Selection mode: estimates from the minimizers whose Lagrangian
    x-gradient matches the base gradient.  Hull mode ("caratheodory"):
    the base gradient is reproduced as convex combinations of at most
    n+1 Lagrangian gradients and the per-minimizer derivatives are
    Minkowski-summed with the combination weights.
    """
    xbar, xund, xstar = _fvec(query.xbar), _fvec(query.xund), _fvec(query.xstar)
    n = problem.n
    mins, under = _minimizer_list(problem, xbar, minimizers)
    if not mins:
        raise HypothesisError("no minimizer available at xbar")
    uniq = []
    gens = []
    hyps = []
    for k, y in enumerate(mins):
        mult = kernel.multipliers(problem, xbar, y)
        if mult.empty:
            raise HypothesisError("no multiplier exists at a minimizer")
        if not mult.is_singleton():
            hyps.append(
                HypothesisRecord(
                    f"multiplier-single-valued[y{k}]",
                    FAILED,
                    f"{len(mult.vertices)} vertices; first vertex used",
                )
            )
        u = mult.vertices[0]
        uniq.append(u)
        gens.append(differentiate(problem, xbar, y, u).grad_x_L)
    sel = [
        k
        for k, bk in enumerate(gens)
        if float(np.max(np.abs(bk - xund))) <= SELECTION_TOL
    ]
    cc = verify_concave_convex(problem)
    hyps.append(
        HypothesisRecord(
            "concave-convex-shape",
            VERIFIED if cc == "verified" else (ASSERTED if cc == "asserted" else NOT_CHECKED),
            f"shape check: {cc}",
        )
    )
    if mode == "auto":
        mode = "selection" if sel else "caratheodory"

    def _point_set(k, w):
        try:
            sens = sensitivity_system(problem, _kkt_at(problem, xbar, mins[k], uniq[k]))
            lag = differentiate(problem, xbar, mins[k], uniq[k])
            H = lag.Lxx + sens.ds.T @ lag.Lyx + (
                sens.du.T @ lag.gx if problem.p else 0.0
            )
            return PolySet.from_point(H @ w, f"sl[y{k}]"), True
        except DegeneracyError:
            realizer = _solution_realizer(
                problem, xbar, mins[k], [uniq[k]], flavor, branch_cap
            )
            pieces = _compose_pieces(
                problem, xbar, mins[k], uniq[k], w, realizer, flavor, branch_cap,
                f"sl[y{k}]",
            )
            return PolySet(n, pieces), False

    if mode == "selection":
        if not sel:
            raise HypothesisError(
                "base gradient matches no minimizer's Lagrangian gradient; "
                "use the hull mode for interior base gradients"
            )
        hyps.append(
            HypothesisRecord(
                "gradient-selection",
                VERIFIED,
                f"{len(sel)} of {len(mins)} minimizers match the base gradient",
            )
        )
        result = PolySet.empty(n)
        for k in sel:
            part, smooth = _point_set(k, xstar)
            if not smooth:
                hyps.append(
                    HypothesisRecord(
                        f"kkt-system-regular[y{k}]",
                        FAILED,
                        "composed estimate used at this minimizer",
                    )
                )
            result = result.union(part)
        return HessianEstimate(
            query=query,
            case="single-lambda",
            theorem="single-lambda-selection",
            result=result,
            hypotheses=hyps,
            equality=False,
            under_enumerated=under,
        )

    if mode != "caratheodory":
        raise ValueError(f"unknown single-lambda mode {mode!r}")

    gen_map = FiniteGeneratorMap(
        generators=gens,
        coderiv=lambda k, w: _point_set(k, _fvec(w))[0],
        target_dim=n,
    )
    est = hull_coderivative(gen_map, xund, xstar, qualification="check")
    hyps.extend(est.hypotheses)
    hyps.append(
        HypothesisRecord(
            "generator-stability",
            ASSUMED,
            "minimizer branches treated as a locally fixed generator family",
        )
    )
    supports = sorted({pc.provenance.split("|")[0] for pc in est.result.pieces})
    return HessianEstimate(
        query=query,
        case="single-lambda",
        theorem="single-lambda-hull",
        result=est.result,
        hypotheses=hyps,
        equality=False,
        under_enumerated=under,
        supports=supports,
    )


# ---------------------------------------------------------------------------
# Exact linear-program cases
# ---------------------------------------------------------------------------


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(v)  # floats convert exactly (binary expansion)


def _frac_vec(v) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=object))
    return np.array([_frac(x) for x in arr], dtype=object)


def _frac_mat(M) -> np.ndarray:
    M = np.asarray(M, dtype=object)
    if M.ndim != 2:
        raise ValueError("matrix expected")
    return np.array([[_frac(v) for v in row] for row in M], dtype=object)


def _ozeros(r, c) -> np.ndarray:
    return np.full((r, c), Fraction(0), dtype=object)


def _oeye(k) -> np.ndarray:
    out = _ozeros(k, k)
    for i in range(k):
        out[i, i] = Fraction(1)
    return out


def _omatvec(M, v) -> np.ndarray:
    return np.array(
        [sum((M[i, j] * v[j] for j in range(len(v))), Fraction(0)) for i in range(M.shape[0])],
        dtype=object,
    )


def _exact_partition(g_vals, u_vals) -> Partition:
    eta, theta, nu = [], [], []
    for i in range(len(u_vals)):
        if u_vals[i] > 0:
            nu.append(i)
        elif g_vals[i] == 0:
            theta.append(i)
        else:
            eta.append(i)
    return Partition(eta=tuple(eta), theta=tuple(theta), nu=tuple(nu), ambiguous=())


def lp_lhs_hessian(
    A,
    b,
    query: HessianQuery,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> HessianEstimate:
    """Exact second-order estimate for  phi(x) = min { x . y : A y <= b }.

    The base gradient is a minimizer of the program at xbar; the query is
    checked by exact rational feasibility and multiplier enumeration, and
    the estimate is the union over multiplier vertices of the branch
    images  { a : (a, c) in branches, A^T c = -xstar }.
    """
    A = _frac_mat(A)
    b = _frac_vec(b)
    p, m = A.shape
    xbar = _frac_vec(query.xbar)
    ybar = _frac_vec(query.xund)
    xstar = _frac_vec(query.xstar)
    if len(xbar) != m or len(b) != p:
        raise ValueError("query/length mismatch with the program data")
    g = _omatvec(A, ybar) - b
    if any(gi > 0 for gi in g):
        raise HypothesisError("base gradient is not feasible for the program (exact)")
    inactive = [i for i in range(p) if g[i] < 0]
    rows = [list(A.T[j]) for j in range(m)]
    rhs = [-xbar[j] for j in range(m)]
    for i in inactive:
        row = [Fraction(0)] * p
        row[i] = Fraction(1)
        rows.append(row)
        rhs.append(Fraction(0))
    mult_poly = Polyhedron(
        p,
        C=-_oeye(p),
        d=np.array([Fraction(0)] * p, dtype=object),
        C_eq=np.array(rows, dtype=object),
        d_eq=np.array(rhs, dtype=object),
    )
    vf = mult_poly.vertices()
    if vf.empty:
        raise HypothesisError(
            "no multiplier certifies optimality: the base gradient is not a "
            "minimizer at xbar (exact check)"
        )
    hyps = [
        HypothesisRecord("minimizer-exact", VERIFIED, "rational KKT certificate"),
    ]
    under = False
    if vf.rays:
        under = True
        hyps.append(
            HypothesisRecord(
                "multiplier-vertex-union", ASSUMED, "unbounded multiplier set; vertices only"
            )
        )
    slice_rows = np.hstack([_ozeros(m, m), A.T])
    proj = np.hstack([_oeye(m), _ozeros(m, p)])
    zeros_m = np.array([Fraction(0)] * m, dtype=object)
    pieces = []
    for j, u in enumerate(vf.vertices):
        part = _exact_partition(g, u)
        fam = build_branch_family(
            A, part, np.array([Fraction(0)] * p, dtype=object), flavor, branch_cap
        )
        for br in fam.branches:
            sliced = br.poly.with_eqs(slice_rows, -xstar)
            pieces.append(Piece(sliced, proj, zeros_m, f"lp-lhs[u{j}|{br.label}]"))
    return HessianEstimate(
        query=query,
        case="lp-lhs",
        theorem="lp-lhs",
        result=PolySet(m, pieces),
        hypotheses=hyps,
        equality=False,
        exact=True,
        under_enumerated=under,
    )


def lp_lhs_rhs_hessian(
    A,
    query: HessianQuery,
    cost=None,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> HessianEstimate:
    """Exact second-order estimate for  phi(x) = min { c . y : A y <= x }.

    The base gradient pins the multiplier u = -xund.  Since stationarity
    A^T u = -c determines the cost uniquely from the multiplier, ``cost``
    may be omitted, in which case c := A^T xund is used; supplying it adds
    an honest consistency check against the problem data.  If -xund is
    not a valid multiplier, or no minimizer is complementary to it, the
    estimate is empty and the failure is recorded as a diagnostic rather
    than raised.
    """
    A = _frac_mat(A)
    p, m = A.shape
    xbar = _frac_vec(query.xbar)
    xstar = _frac_vec(query.xstar)
    u = -_frac_vec(query.xund)
    n = p
    if len(xbar) != p:
        raise ValueError("parameter length must match the constraint count")
    inferred = cost is None
    cost_eff = -_omatvec(A.T, u) if inferred else _frac_vec(cost)
    if len(cost_eff) != m:
        raise ValueError("cost length must match the variable count")
    hyps = []
    stat = _omatvec(A.T, u) + cost_eff
    if any(ui < 0 for ui in u) or any(si != 0 for si in stat):
        hyps.append(
            HypothesisRecord(
                "base-covector-multiplier",
                FAILED,
                "-xund is not a nonnegative solution of A^T u = -cost; "
                "the graph point is empty",
            )
        )
        return HessianEstimate(
            query=query,
            case="lp-lhs-rhs",
            theorem="lp-lhs-rhs",
            result=PolySet.empty(n),
            hypotheses=hyps,
            exact=True,
        )
    hyps.append(
        HypothesisRecord(
            "base-covector-multiplier",
            VERIFIED,
            "exact"
            + ("; cost inferred from stationarity A^T u = -c" if inferred else ""),
        )
    )
    supp = [i for i in range(p) if u[i] > 0]
    face_eq_rows = np.array([list(A[i]) for i in supp], dtype=object) if supp else None
    face_eq_rhs = np.array([xbar[i] for i in supp], dtype=object) if supp else None
    face = Polyhedron(m, C=A, d=xbar, C_eq=face_eq_rows, d_eq=face_eq_rhs)
    vf = face.vertices()
    ys = list(vf.vertices)
    if len(ys) > 1:
        mid = np.array(
            [sum((y[j] for y in ys), Fraction(0)) / len(ys) for j in range(m)],
            dtype=object,
        )
        ys.append(mid)
        hyps.append(
            HypothesisRecord(
                "complementary-face",
                ASSUMED,
                f"{len(vf.vertices)} face vertices plus the centroid enumerated",
            )
        )
    if not ys and vf.anchor is not None:
        ys = [vf.anchor]
        hyps.append(
            HypothesisRecord(
                "complementary-face", ASSUMED, "non-pointed face; anchor point only"
            )
        )
    under = bool(vf.rays)
    if not ys:
        hyps.append(
            HypothesisRecord(
                "complementary-face",
                FAILED,
                "no minimizer is complementary to the base covector; "
                "the graph point is empty",
            )
        )
        return HessianEstimate(
            query=query,
            case="lp-lhs-rhs",
            theorem="lp-lhs-rhs",
            result=PolySet.empty(n),
            hypotheses=hyps,
            exact=True,
        )
    # Lagrangian blocks for the fixed-cost objective: Lyy = 0, Lxy = 0,
    # gy = A, gx = -I.
    Mx = np.hstack([_ozeros(n, m), -_oeye(p)])
    My = np.hstack([_ozeros(m, m), A.T])
    v_const = np.array([Fraction(0)] * m, dtype=object)
    link = np.hstack([My, My])
    value_map = np.hstack([Mx, Mx])
    zeros_n = np.array([Fraction(0)] * n, dtype=object)
    neg_xstar = np.array([-v for v in xstar], dtype=object)
    zero_cov = np.array([Fraction(0)] * p, dtype=object)
    pieces = []
    for k, y in enumerate(ys):
        g = _omatvec(A, y) - xbar
        part = _exact_partition(g, u)
        fam1 = build_branch_family(A, part, neg_xstar, flavor, branch_cap)
        # inner families: one per multiplier vertex at this minimizer
        inactive = [i for i in range(p) if g[i] < 0]
        rows = [list(A.T[j]) for j in range(m)]
        rhs = [-cost_eff[j] for j in range(m)]
        for i in inactive:
            row = [Fraction(0)] * p
            row[i] = Fraction(1)
            rows.append(row)
            rhs.append(Fraction(0))
        mult_poly = Polyhedron(
            p,
            C=-_oeye(p),
            d=np.array([Fraction(0)] * p, dtype=object),
            C_eq=np.array(rows, dtype=object),
            d_eq=np.array(rhs, dtype=object),
        )
        uvf = mult_poly.vertices()
        for j, u2 in enumerate(uvf.vertices):
            part2 = _exact_partition(g, u2)
            fam2 = build_branch_family(A, part2, zero_cov, flavor, branch_cap)
            for br1 in fam1.branches:
                for br2 in fam2.branches:
                    prod = br1.poly.product(br2.poly)
                    prod = prod.with_eqs(link, -v_const)
                    pieces.append(
                        Piece(
                            prod,
                            value_map,
                            zeros_n,
                            f"lp-lhs-rhs[y{k}u{j}|{br1.label}|{br2.label}]",
                        )
                    )
    return HessianEstimate(
        query=query,
        case="lp-lhs-rhs",
        theorem="lp-lhs-rhs",
        result=PolySet(n, pieces),
        hypotheses=hyps,
        exact=True,
        under_enumerated=under,
    )


# ---------------------------------------------------------------------------
# Structural detection and dispatch
# ---------------------------------------------------------------------------


def _const_val(e):
    return e.value if isinstance(e, Const) else None


def lp_cost_parametric_data(problem: ParametricProblem):
    """(A, b) when the problem is exactly  min { x . y : A y <= b }."""
    if problem.n != problem.m or not problem.constraints_x_free():
        return None
    tab = problem._dtable()
    for j in range(problem.m):
        if tab["fy"][j].key() != Var("x", j).key():
            return None
        if tab["fx"][j].key() != Var("y", j).key():
            return None
    p, m = problem.p, problem.m
    A = [[None] * m for _ in range(p)]
    for i in range(p):
        for j in range(m):
            v = _const_val(tab["gy"][i][j])
            if v is None:
                return None
            A[i][j] = Fraction(v)
    zx = [Fraction(0)] * problem.n
    zy = [Fraction(0)] * m
    b = [-Fraction(problem.eval_expr(gi, zx, zy)) for gi in problem.g]
    return np.array(A, dtype=object), np.array(b, dtype=object)


def lp_rhs_parametric_data(problem: ParametricProblem):
    """(A, cost) when the problem is exactly  min { c . y : A y <= x }.

    Only the fixed-cost objective qualifies: the branch pieces for this
    case are derived with an x-free objective (zero Lxy block), so a
    parameter-coupled cost must go through the general machinery.
    """
    if problem.p != problem.n or problem.p == 0:
        return None
    tab = problem._dtable()
    p, m = problem.p, problem.m
    A = [[None] * m for _ in range(p)]
    for i in range(p):
        for j in range(problem.n):
            v = _const_val(tab["gx"][i][j])
            if v is None or Fraction(v) != (Fraction(-1) if i == j else Fraction(0)):
                return None
        for j in range(m):
            v = _const_val(tab["gy"][i][j])
            if v is None:
                return None
            A[i][j] = Fraction(v)
    zx = [Fraction(0)] * problem.n
    zy = [Fraction(0)] * m
    for gi in problem.g:
        if Fraction(problem.eval_expr(gi, zx, zy)) != 0:
            return None
    A = np.array(A, dtype=object)
    if not all(isinstance(e, Const) and e.value == 0 for e in tab["fx"]):
        return None
    cost = []
    for k in range(m):
        v = _const_val(tab["fy"][k])
        if v is None:
            return None
        cost.append(Fraction(v))
    if Fraction(problem.eval_expr(problem.f, zx, zy)) != 0:
        return None
    return A, np.array(cost, dtype=object)


def route(problem: ParametricProblem, query: HessianQuery | None = None):
    """Pick a case from problem structure; returns (case, info).

    The info dict carries anything expensive that was computed along the
    way (minimizers, multiplier counts) so ``compute`` can reuse it.
    """
    lp1 = lp_cost_parametric_data(problem)
    if lp1 is not None:
        return "lp-lhs", {"lp": lp1}
    lp2 = lp_rhs_parametric_data(problem)
    if lp2 is not None:
        return "lp-lhs-rhs", {"lp": lp2}
    if problem.constraints_x_free():
        return "unperturbed", {}
    if query is None:
        return "single-s", {}
    res = kernel.solve_value(problem, _fvec(query.xbar))
    info = {"minimizers": res.minimizers, "under": res.under_enumerated}
    counts = []
    for y in res.minimizers:
        mult = kernel.multipliers(problem, _fvec(query.xbar), y)
        counts.append(0 if mult.empty else len(mult.vertices))
    info["multiplier_counts"] = counts
    if len(res.minimizers) == 1 and not res.non_singleton:
        return ("single-single" if counts[0] == 1 else "single-s"), info
    if all(c == 1 for c in counts):
        return "single-lambda", info
    info["doubly_set_valued"] = True
    return "single-s", info


def compute(
    problem: ParametricProblem,
    query: HessianQuery,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
    smode: str = "auto",
    check_membership: bool = True,
) -> HessianEstimate:
    """Run a second-order query end to end.

    Routes 'auto' cases by structure, verifies that the base gradient
    lies in the case-appropriate first-order estimate (skipped for the
    exact LP forms, which carry their own rational optimality checks),
    and dispatches.
    """
    case = query.case
    info = {}
    if case == "auto":
        case, info = route(problem, query)
    if case == "lp-lhs":
        data = info.get("lp") or lp_cost_parametric_data(problem)
        if data is None:
            raise CaseRoutingError(
                "problem is not of the cost-parametric LP form min{x.y : Ay <= b}"
            )
        return lp_lhs_hessian(data[0], data[1], query, flavor, branch_cap)
    if case == "lp-lhs-rhs":
        data = info.get("lp") or lp_rhs_parametric_data(problem)
        if data is None:
            raise CaseRoutingError(
                "problem is not of the RHS-parametric LP form min{c.y : Ay <= x}"
            )
        return lp_lhs_rhs_hessian(data[0], query, cost=data[1], flavor=flavor,
                                  branch_cap=branch_cap)

    mins = info.get("minimizers")
    membership_rec = None
    if check_membership:
        fo = firstorder.auto_estimate(problem, _fvec(query.xbar), minimizers=mins)
        verdict = fo.member(_fvec(query.xund), MEMBERSHIP_TOL)
        if verdict.status == "outside":
            raise HypothesisError(
                f"base gradient is not in the first-order estimate "
                f"({fo.formula}); distance at least {verdict.distance:.3e}"
            )
        membership_rec = HypothesisRecord(
            "base-gradient-membership",
            VERIFIED,
            f"{verdict.status} of the {fo.formula} estimate",
        )

    if case == "unperturbed":
        est = hessian_unperturbed(
            problem, query, minimizers=mins, smode=smode, flavor=flavor,
            branch_cap=branch_cap,
        )
    elif case == "single-single":
        est = hessian_single_single(
            problem, query, minimizers=mins, flavor=flavor, branch_cap=branch_cap
        )
    elif case == "single-s":
        est = hessian_single_s(
            problem, query, minimizers=mins, flavor=flavor, branch_cap=branch_cap
        )
        if info.get("doubly_set_valued"):
            est.hypotheses.append(
                HypothesisRecord(
                    "solution-single-valued",
                    FAILED,
                    "both maps are set-valued; union over all minimizers used",
                )
            )
    elif case == "single-lambda":
        mode = {"auto": "auto", "multi": "selection", "caratheodory": "caratheodory"}.get(
            smode, "auto"
        )
        est = hessian_single_lambda(
            problem, query, minimizers=mins, mode=mode, flavor=flavor,
            branch_cap=branch_cap,
        )
    else:
        raise CaseRoutingError(f"unknown case {case!r}")
    if membership_rec is not None:
        est.hypotheses.insert(0, membership_rec)
    if info.get("under"):
        est.under_enumerated = True
    return est
