"""Coderivative estimates for the multiplier and solution maps.

The common engine is a branch family over auxiliary directions
(a, c) in R^(m+p): a pairs with the decision variables, c with the
constraints.  At a KKT point with index partition (eta, theta, nu) and an
input covector u* the family is cut out by

* nu rows:   u*_i + gy_i . a = 0,
* eta rows:  c_i = 0,
* theta rows, one branch per case assignment:
    - M flavor, three cases per index: {c_i = 0}, {u*_i + gy_i . a = 0},
      or the strict quadrant {u*_i + gy_i . a > 0, c_i > 0};
    - C flavor, two closed cases: {c_i >= 0, u*_i + gy_i . a >= 0} or
      {c_i <= 0, u*_i + gy_i . a <= 0}.

Strict rows are carried as open-row flags on the closure, which is the
sound direction for upper estimates.  The coderivative estimates are the
images of these branches under

    (a, c)  ->  ( Lxy a + gx^T c,  Lyy a + gy^T c ),

the multiplier-map estimate keeping both blocks and the solution-map
estimate keeping the x-block on the slice where the y-block cancels the
requested covector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import kernel
from .errors import BranchCapError, HypothesisError
from .model import (
    KktPoint,
    ParametricProblem,
    Partition,
    classify,
    differentiate,
    kkt_residual,
    verify_concave_convex,
)
from .reporting import ASSERTED, ASSUMED, FAILED, NOT_CHECKED, VERIFIED, HypothesisRecord
from .setcalc import Piece, Polyhedron, PolySet, _as_float

DEFAULT_BRANCH_CAP = 8


@dataclass
class Branch:
    poly: Polyhedron  # in (a, c) space, dim m + p
    label: str


@dataclass
class BranchFamily:
    m: int
    p: int
    partition: Partition
    u_star: np.ndarray
    flavor: str
    branches: list[Branch]
    gy: np.ndarray

    @property
    def dim(self) -> int:
        return self.m + self.p


def build_branch_family(
    gy,
    partition: Partition,
    u_star,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
    prune_empty: bool = True,
) -> BranchFamily:
    """Construct the branch family from raw constraint-gradient rows.

    ``gy`` is the p x m matrix of constraint gradients in y (rational
    entries allowed, the rows are copied verbatim into the polyhedra).
    The cap bounds cases^|theta|; exceeding it raises with the theta size
    in the message so callers can re-run with a larger cap.
    """
    gy = np.asarray(gy)
    if gy.dtype != object:
        gy = np.asarray(gy, dtype=float)
    if gy.ndim != 2:
        raise ValueError("constraint-gradient matrix must be p x m")
    p, m = gy.shape
    u_star = np.asarray(u_star)
    if u_star.dtype != object:
        u_star = np.atleast_1d(np.asarray(u_star, dtype=float))
    if flavor not in ("M", "C"):
        raise ValueError("flavor must be 'M' or 'C'")
    theta = list(partition.theta)
    n_cases = 3 if flavor == "M" else 2
    if n_cases ** len(theta) > branch_cap:
        raise BranchCapError(
            f"{n_cases}^{len(theta)} = {n_cases ** len(theta)} branches exceed the "
            f"cap {branch_cap}; raise --branch-cap to enumerate |theta|={len(theta)}"
        )
    dim = m + p
    exact = gy.dtype == object or u_star.dtype == object
    zero, one = (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)

    def arow(i, neg=False):
        # row of (a, c) coefficients picking gy_i . a
        row = [zero] * dim
        for k in range(m):
            row[k] = -gy[i, k] if neg else gy[i, k]
        return row

    def crow(i, neg=False):
        row = [zero] * dim
        row[m + i] = -one if neg else one
        return row

    base_eq, base_eq_rhs = [], []
    for i in partition.nu:
        base_eq.append(arow(i))
        base_eq_rhs.append(-u_star[i])
    for i in partition.eta:
        base_eq.append(crow(i))
        base_eq_rhs.append(zero)

    case_names = ("c0", "E0", "pos") if flavor == "M" else ("nn", "np")
    branches = []
    for assign in itertools.product(range(n_cases), repeat=len(theta)):
        eq, eq_rhs = list(base_eq), list(base_eq_rhs)
        ineq, ineq_rhs, opens = [], [], []
        for idx, i in zip(assign, theta):
            case = case_names[idx]
            if case == "c0":
                eq.append(crow(i))
                eq_rhs.append(zero)
            elif case == "E0":
                eq.append(arow(i))
                eq_rhs.append(-u_star[i])
            elif case == "pos":
                # u*_i + gy_i . a > 0  and  c_i > 0   (stored as closures)
                ineq.append(arow(i, neg=True))
                ineq_rhs.append(u_star[i])
                opens.append(len(ineq) - 1)
                ineq.append(crow(i, neg=True))
                ineq_rhs.append(zero)
                opens.append(len(ineq) - 1)
            elif case == "nn":
                ineq.append(crow(i, neg=True))
                ineq_rhs.append(zero)
                ineq.append(arow(i, neg=True))
                ineq_rhs.append(u_star[i])
            else:  # "np"
                ineq.append(crow(i))
                ineq_rhs.append(zero)
                ineq.append(arow(i))
                ineq_rhs.append(-u_star[i])
        kw = dict(dtype=object) if exact else dict(dtype=float)
        poly = Polyhedron(
            dim,
            C=np.array(ineq, **kw) if ineq else None,
            d=np.array(ineq_rhs, **kw) if ineq else None,
            C_eq=np.array(eq, **kw) if eq else None,
            d_eq=np.array(eq_rhs, **kw) if eq else None,
            open_rows=opens,
        )
        label = ",".join(
            f"g{i + 1}:{case_names[idx]}" for idx, i in zip(assign, theta)
        ) or "base"
        if prune_empty and poly.is_empty():
            continue
        branches.append(Branch(poly=poly, label=label))
    return BranchFamily(
        m=m,
        p=p,
        partition=partition,
        u_star=u_star,
        flavor=flavor,
        branches=branches,
        gy=gy,
    )


def branch_family(
    problem: ParametricProblem,
    kkt: KktPoint,
    u_star,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> BranchFamily:
    """Branch family at a validated KKT point of the given problem."""
    gy = problem.jac_y_g(kkt.x, kkt.y)
    u_star = np.atleast_1d(np.asarray(u_star, dtype=float))
    if u_star.shape != (problem.p,):
        raise ValueError(f"covector must have length p={problem.p}")
    return build_branch_family(gy, kkt.partition, u_star, flavor, branch_cap)


def lagrangian_blocks(problem: ParametricProblem, kkt: KktPoint):
    lag = differentiate(problem, kkt.x, kkt.y, kkt.u)
    return lag


def coderivative_map_matrix(lag) -> np.ndarray:
    """(n+m) x (m+p) matrix of (a, c) -> (Lxy a + gx^T c, Lyy a + gy^T c)."""
    n, m = lag.Lxy.shape
    p = lag.gx.shape[0]
    M = np.zeros((n + m, m + p))
    M[:n, :m] = lag.Lxy
    if p:
        M[:n, m:] = lag.gx.T
    M[n:, :m] = lag.Lyy
    if p:
        M[n:, m:] = lag.gy.T
    return M


@dataclass
class CqReport:
    """Verdicts for the two branch-level qualification conditions.

    only_zero_preimage: the zero-covector family maps no nonzero (a, c)
    to zero, i.e. the estimate map is injective at zero.  Checked on
    branch closures, which can be conservative (a strict branch may fail
    here while the open set is fine); the detail string records that.

    image_vanishes: every branch direction maps to zero; this is the
    coderivative criterion certifying the multiplier map is
    Lipschitz-like around the point.
    """

    only_zero_preimage: bool
    image_vanishes: bool
    lipschitz_like: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "only_zero_preimage": self.only_zero_preimage,
            "image_vanishes": self.image_vanishes,
            "lipschitz_like": self.lipschitz_like,
            "detail": self.detail,
        }


def check_cq_lambda(
    problem: ParametricProblem,
    kkt: KktPoint,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
) -> CqReport:
    """Evaluate both qualification conditions at the zero covector."""
    fam = branch_family(problem, kkt, np.zeros(problem.p), flavor, branch_cap)
    lag = differentiate(problem, kkt.x, kkt.y, kkt.u)
    M = coderivative_map_matrix(lag)
    only_zero = True
    vanishes = True
    dim = fam.dim
    for br in fam.branches:
        sliced = br.poly.with_eqs(M, np.zeros(M.shape[0]))
        probe = PolySet(dim, [Piece(sliced, np.eye(dim), np.zeros(dim), br.label)])
        if not probe.is_empty() and not probe.is_zero_singleton(tol=1e-9):
            only_zero = False
        image = PolySet(M.shape[0], [Piece(br.poly, M, np.zeros(M.shape[0]), br.label)])
        if not image.is_zero_singleton(tol=1e-9):
            vanishes = False
        if not only_zero and not vanishes:
            break
    return CqReport(
        only_zero_preimage=only_zero,
        image_vanishes=vanishes,
        lipschitz_like=vanishes,
        detail="checked on branch closures (conservative for strict branches)",
    )


@dataclass
class CoderivEstimate:
    kind: str  # "lambda" | "S" | "hull"
    covector: np.ndarray
    result: PolySet
    cq: CqReport | None = None
    hypotheses: list[HypothesisRecord] = field(default_factory=list)
    families: list[BranchFamily] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "covector": [float(v) for v in np.atleast_1d(self.covector)],
            "cq": self.cq.to_json() if self.cq else None,
            "hypotheses": [h.to_json() for h in self.hypotheses],
            "set": self.result.to_json(),
        }


def coderivative_lambda(
    problem: ParametricProblem,
    kkt: KktPoint,
    u_star,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
    with_cq: bool = True,
) -> CoderivEstimate:
    """Upper estimate of the multiplier-map coderivative at a KKT point.

    Returns the union over branches of the images of (a, c) under the
    Lagrangian block map; the result lives in R^(n+m) (x-block then
    y-block).
    """
    u_star = np.atleast_1d(np.asarray(u_star, dtype=float))
    fam = branch_family(problem, kkt, u_star, flavor, branch_cap)
    lag = differentiate(problem, kkt.x, kkt.y, kkt.u)
    M = coderivative_map_matrix(lag)
    pieces = [
        Piece(br.poly, M, np.zeros(M.shape[0]), f"dlambda[{br.label}]")
        for br in fam.branches
    ]
    cq = check_cq_lambda(problem, kkt, flavor, branch_cap) if with_cq else None
    hyps = [
        HypothesisRecord(
            "kkt-point",
            VERIFIED,
            f"residual {kkt.kkt_residual:.2e}",
        )
    ]
    if kkt.partition.ambiguous:
        hyps.append(
            HypothesisRecord(
                "partition-unambiguous",
                FAILED,
                f"indices {list(kkt.partition.ambiguous)} straddle the activity tolerance",
            )
        )
    return CoderivEstimate(
        kind="lambda",
        covector=u_star,
        result=PolySet(M.shape[0], pieces),
        cq=cq,
        hypotheses=hyps,
        families=[fam],
    )


def coderivative_S(
    problem: ParametricProblem,
    xbar,
    ybar,
    ystar,
    flavor: str = "M",
    branch_cap: int = DEFAULT_BRANCH_CAP,
    multiplier_vertices=None,
    with_cq: bool = True,
) -> CoderivEstimate:
    """Upper estimate of the solution-map coderivative D*S(xbar|ybar)(ystar).

    Union over multiplier vertices u of the x-block images of the
    zero-covector branch family, sliced where the y-block equals -ystar:

        { Lxy a + gx^T c : ystar + Lyy a + gy^T c = 0, (a, c) in branches }.

    Requires MFCQ; the convexity-in-y hypothesis is taken from the
    quadratic check or the problem flag and logged.  Only multiplier
    vertices enter the union (logged as a possible under-enumeration).
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    ybar = np.atleast_1d(np.asarray(ybar, dtype=float))
    ystar = np.atleast_1d(np.asarray(ystar, dtype=float))
    n, m, p = problem.n, problem.m, problem.p
    hyps = []
    mfcq = kernel.check_mfcq(problem, xbar, ybar)
    hyps.append(HypothesisRecord("mfcq", VERIFIED if mfcq.holds else FAILED))
    if not mfcq.holds:
        raise HypothesisError("MFCQ fails at (xbar, ybar)")
    cc = verify_concave_convex(problem)
    if cc == "verified":
        hyps.append(HypothesisRecord("convex-in-y", VERIFIED, "quadratic shape check"))
    elif problem.flags.get("convex_in_y"):
        hyps.append(HypothesisRecord("convex-in-y", ASSERTED, "problem flag"))
    else:
        hyps.append(
            HypothesisRecord("convex-in-y", ASSUMED, "no flag; estimate used as-is")
        )
    if multiplier_vertices is None:
        mult = kernel.multipliers(problem, xbar, ybar)
        if mult.empty:
            raise HypothesisError("no multiplier exists at (xbar, ybar)")
        multiplier_vertices = mult.vertices
        if not mult.bounded:
            hyps.append(HypothesisRecord("bounded-multiplier-set", FAILED))
    hyps.append(
        HypothesisRecord(
            "multiplier-vertex-union",
            ASSUMED,
            f"union over {len(multiplier_vertices)} polytope vertices only",
        )
    )
    pieces = []
    families = []
    cq_all = True
    for k, u in enumerate(multiplier_vertices):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        part = classify(problem, xbar, ybar, u)
        kkt = KktPoint(
            x=xbar,
            y=ybar,
            u=u,
            partition=part,
            kkt_residual=kkt_residual(problem, xbar, ybar, u),
        )
        fam = branch_family(problem, kkt, np.zeros(p), flavor, branch_cap)
        families.append(fam)
        lag = differentiate(problem, xbar, ybar, u)
        M = coderivative_map_matrix(lag)
        x_rows, y_rows = M[:n], M[n:]
        for br in fam.branches:
            sliced = br.poly.with_eqs(y_rows, -ystar)
            pieces.append(
                Piece(sliced, x_rows, np.zeros(n), f"dS[u{k}|{br.label}]")
            )
        if with_cq:
            rep = check_cq_lambda(problem, kkt, flavor, branch_cap)
            if not rep.only_zero_preimage:
                cq_all = False
    if with_cq:
        hyps.append(
            HypothesisRecord(
                "branch-map-injective-at-zero",
                VERIFIED if cq_all else FAILED,
                "required for validity of the solution-map estimate",
            )
        )
    return CoderivEstimate(
        kind="S",
        covector=ystar,
        result=PolySet(n, pieces),
        cq=None,
        hypotheses=hyps,
        families=families,
    )


def solution_map_lipschitz_like(
    problem: ParametricProblem, xbar, ybar, branch_cap: int = DEFAULT_BRANCH_CAP
) -> bool:
    """True when the zero-image qualification holds at every multiplier
    vertex, certifying the Lipschitz-like property and hence
    D*S(xbar|ybar)(0) = {0}."""
    mult = kernel.multipliers(problem, xbar, ybar)
    if mult.empty:
        return False
    for u in mult.vertices:
        part = classify(problem, xbar, ybar, u)
        kkt = KktPoint(
            x=np.atleast_1d(np.asarray(xbar, float)),
            y=np.atleast_1d(np.asarray(ybar, float)),
            u=u,
            partition=part,
            kkt_residual=kkt_residual(problem, xbar, ybar, u),
        )
        if not check_cq_lambda(problem, kkt, "M", branch_cap).image_vanishes:
            return False
    return True


# ---------------------------------------------------------------------------
# Hull coderivative: maps with finitely generated convex values
# ---------------------------------------------------------------------------


@dataclass
class FiniteGeneratorMap:
    """A set-valued map whose value at the base parameter is the convex
    hull of finitely many generators, together with a coderivative
    provider per generator: ``coderiv(index, covector) -> PolySet``."""

    generators: list[np.ndarray]
    coderiv: Callable[[int, np.ndarray], PolySet]
    target_dim: int


def hull_coderivative(
    gen_map: FiniteGeneratorMap,
    ybar,
    ystar,
    qualification: str = "check",
    weight_tol: float = 1e-9,
) -> CoderivEstimate:
    """Coderivative estimate of a hull-valued map at (xbar, ybar).

    Enumerates supports of ybar among the generators (at most d+1 of
    them, d the target-space dimension), takes the vertices of each
    support's weight polytope, and for each vertex weight a sums the
    per-generator coderivatives at the scaled covectors a_s * ystar.

    With ``qualification="check"`` the zero-covector sum condition is
    verified piecewise: it holds whenever every per-generator
    coderivative at 0 is {0}.  Failure is recorded, not fatal.
    """
    ybar = np.atleast_1d(np.asarray(ybar, dtype=float))
    ystar = np.atleast_1d(np.asarray(ystar, dtype=float))
    gens = [np.atleast_1d(np.asarray(g, float)) for g in gen_map.generators]
    d = ybar.shape[0]
    hyps = []
    if qualification == "check":
        ok = True
        for s in range(len(gens)):
            if not gen_map.coderiv(s, np.zeros(d)).is_zero_singleton(tol=1e-9):
                ok = False
                break
        hyps.append(
            HypothesisRecord(
                "hull-sum-qualification",
                VERIFIED if ok else FAILED,
                "each generator coderivative at 0 is {0}" if ok else
                "a generator coderivative at 0 is nontrivial; sums may interact",
            )
        )
    else:
        hyps.append(HypothesisRecord("hull-sum-qualification", ASSUMED))

    pieces_out: list[Piece] = []
    seen = set()
    result = PolySet.empty(gen_map.target_dim)
    for size in range(1, min(len(gens), d + 1) + 1):
        for support in itertools.combinations(range(len(gens)), size):
            W = Polyhedron(
                size,
                C=-np.eye(size),
                d=np.zeros(size),
                C_eq=np.vstack(
                    [np.column_stack([gens[s] for s in support]), np.ones((1, size))]
                ),
                d_eq=np.concatenate([ybar, [1.0]]),
            )
            vf = W.vertices()
            for w in vf.vertices:
                w = _as_float(w)
                active = tuple(
                    (support[j], round(float(w[j]), 12))
                    for j in range(size)
                    if w[j] > weight_tol
                )
                if not active or active in seen:
                    continue
                seen.add(active)
                summed = None
                for s, weight in active:
                    part = gen_map.coderiv(s, weight * ystar)
                    summed = part if summed is None else summed.minkowski(part)
                tag = "+".join(f"b{s}*{weight:g}" for s, weight in active)
                for pc in summed.pieces:
                    pieces_out.append(
                        Piece(pc.poly, pc.A, pc.b, f"hull[{tag}]|{pc.provenance}")
                    )
    if not pieces_out:
        hyps.append(
            HypothesisRecord(
                "target-in-generator-hull",
                FAILED,
                "ybar is not a convex combination of the generators",
            )
        )
    result = PolySet(gen_map.target_dim, pieces_out)
    return CoderivEstimate(
        kind="hull",
        covector=ystar,
        result=result,
        hypotheses=hyps,
    )
