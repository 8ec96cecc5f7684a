"""Polyhedral set calculus.

Everything downstream (subdifferential and coderivative estimates) is a
finite union of affine images of polyhedra.  This module provides the two
carriers:

* :class:`Polyhedron` -- one convex piece in H-form, rows C z <= d plus
  equality rows, with a set of rows flagged "open" (strict).  Strict rows
  are stored closed; computations use the closure, which is the sound
  direction for upper estimates, and membership reports "boundary" when a
  point only touches the closure of an open row.
* :class:`PolySet` -- a finite union of pieces, each an affine image
  ``z -> A z + b`` of a source polyhedron, tagged with a provenance
  string.

Arithmetic is float by default with 1e-9 pivot/rank tolerances.  Arrays
of ``fractions.Fraction`` (dtype=object) switch the vertex-enumeration
and affine-hull paths to exact rational arithmetic; LP-based queries
always run in floating point.

Intended scale is dimension <= 12 with a handful of pieces; enumeration
is combinatorial and will warn rather than fail above that.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError

RANK_TOL = 1e-9
DEDUP_TOL = 1e-6
MAX_SET_DIM = 12


class SetScaleWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Generic linear algebra (float or Fraction)
# ---------------------------------------------------------------------------


def _is_rational(arr) -> bool:
    return isinstance(arr, np.ndarray) and arr.dtype == object


def _as_float(arr) -> np.ndarray:
    return np.asarray(arr, dtype=float)


def _rows_of(M, exact: bool):
    if exact:
        return [[Fraction(v) if not isinstance(v, Fraction) else v for v in row] for row in M]
    return [[float(v) for v in row] for row in np.asarray(M, dtype=float)]


def _gauss(A_rows, b_vec, exact: bool):
    """Row-reduce [A | b].  Returns (particular, nullspace_basis) where
    ``particular`` is None when the system is inconsistent.

    A_rows may be empty (whole space).  Pure Python so the same code path
    serves exact Fractions and floats; sizes here are tiny by design.
    """
    rows = [list(r) + [b_vec[i]] for i, r in enumerate(A_rows)]
    ncols = len(A_rows[0]) if A_rows else 0
    if not A_rows:
        zero = Fraction(0) if exact else 0.0
        one = Fraction(1) if exact else 1.0
        basis = []
        for j in range(ncols):
            v = [zero] * ncols
            v[j] = one
            basis.append(v)
        return [zero] * ncols, basis

    tol = 0 if exact else RANK_TOL * max(1.0, max(abs(v) for r in rows for v in r))
    nrows = len(rows)
    pivots = []  # (row, col)
    r = 0
    for c in range(ncols):
        # partial pivoting
        best, best_val = None, tol
        for i in range(r, nrows):
            v = abs(rows[i][c])
            if v > best_val:
                best, best_val = i, v
        if best is None:
            continue
        rows[r], rows[best] = rows[best], rows[r]
        piv = rows[r][c]
        rows[r] = [v / piv for v in rows[r]]
        for i in range(nrows):
            if i != r and rows[i][c] != 0:
                factor = rows[i][c]
                if not exact and abs(factor) <= tol:
                    continue
                rows[i] = [vi - factor * vr for vi, vr in zip(rows[i], rows[r])]
        pivots.append((r, c))
        r += 1
        if r == nrows:
            break
    # consistency
    for i in range(r, nrows):
        if abs(rows[i][ncols]) > (0 if exact else max(tol, RANK_TOL)):
            return None, []
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    particular = [zero] * ncols
    pivot_cols = {c: i for i, c in pivots}
    for i, c in pivots:
        particular[c] = rows[i][ncols]
    free_cols = [c for c in range(ncols) if c not in pivot_cols]
    basis = []
    for fc in free_cols:
        v = [zero] * ncols
        v[fc] = one
        for i, c in pivots:
            v[c] = -rows[i][fc]
        basis.append(v)
    return particular, basis


def solve_linear(A, b, exact: bool | None = None):
    """Particular solution and nullspace basis of A z = b.

    Returns (z0, basis); z0 is None when inconsistent.  Exact mode is
    inferred from dtype unless forced.
    """
    A = np.asarray(A)
    if exact is None:
        exact = _is_rational(A)
    rows = _rows_of(A, exact) if A.size else []
    if A.size == 0 and A.ndim == 2 and A.shape[1] > 0:
        # no rows: everything solves
        rows = []
        z0, basis = _gauss([], [], exact)
        ncols = A.shape[1]
        zero = Fraction(0) if exact else 0.0
        one = Fraction(1) if exact else 1.0
        z0 = [zero] * ncols
        basis = []
        for j in range(ncols):
            v = [zero] * ncols
            v[j] = one
            basis.append(v)
        return z0, basis
    bl = list(b)
    if exact:
        bl = [Fraction(v) if not isinstance(v, Fraction) else v for v in bl]
    else:
        bl = [float(v) for v in bl]
    return _gauss(rows, bl, exact)


def matrix_rank_generic(A, exact: bool | None = None) -> int:
    A = np.asarray(A)
    if A.size == 0:
        return 0
    if exact is None:
        exact = _is_rational(A)
    if not exact:
        return int(np.linalg.matrix_rank(_as_float(A), tol=RANK_TOL))
    rows = _rows_of(A, True)
    _, basis = _gauss(rows, [Fraction(0)] * len(rows), True)
    return A.shape[1] - len(basis)


# ---------------------------------------------------------------------------
# Polyhedron
# ---------------------------------------------------------------------------


@dataclass
class VForm:
    """Vertex representation: vertices, recession directions, and an
    interior anchor used when the set has no extreme points."""

    vertices: list
    rays: list
    anchor: np.ndarray | None = None

    @property
    def empty(self) -> bool:
        return not self.vertices and self.anchor is None


class Polyhedron:
    """H-form polyhedron { z : C z <= d, C_eq z = d_eq }.

    ``open_rows`` flags inequality rows meant strictly; the stored set is
    the closure.  Construct via the classmethods or by stacking rows on
    an existing instance.
    """

    def __init__(self, dim, C=None, d=None, C_eq=None, d_eq=None, open_rows=()):
        self.dim = int(dim)
        self.C = self._mat(C, self.dim)
        self.d = self._vec(d, self.C.shape[0])
        self.C_eq = self._mat(C_eq, self.dim)
        self.d_eq = self._vec(d_eq, self.C_eq.shape[0])
        self.open_rows = frozenset(int(i) for i in open_rows)
        for i in self.open_rows:
            if not 0 <= i < self.C.shape[0]:
                raise DimensionError(f"open row index {i} out of range")
        if self.dim > MAX_SET_DIM:
            warnings.warn(
                f"polyhedron dimension {self.dim} exceeds intended scale "
                f"({MAX_SET_DIM})",
                SetScaleWarning,
                stacklevel=2,
            )

    @staticmethod
    def _mat(M, dim):
        if M is None:
            return np.zeros((0, dim))
        M = np.asarray(M)
        if M.dtype != object:
            M = np.asarray(M, dtype=float)
        if M.size == 0:
            return np.zeros((0, dim))
        if M.ndim != 2 or M.shape[1] != dim:
            raise DimensionError(f"matrix shape {M.shape} does not match dim {dim}")
        return M

    @staticmethod
    def _vec(v, nrows):
        if v is None:
            v = np.zeros(0)
        v = np.asarray(v)
        if v.dtype != object:
            v = np.asarray(v, dtype=float)
        v = np.atleast_1d(v)
        if v.shape[0] != nrows:
            raise DimensionError(f"rhs length {v.shape[0]} does not match {nrows} rows")
        return v

    # -- constructors --------------------------------------------------------

    @classmethod
    def whole(cls, dim) -> "Polyhedron":
        return cls(dim)

    @classmethod
    def from_box(cls, bounds) -> "Polyhedron":
        dim = len(bounds)
        C, d = [], []
        for i, (lo, hi) in enumerate(bounds):
            row = [0.0] * dim
            row[i] = 1.0
            C.append(list(row))
            d.append(hi)
            row = [0.0] * dim
            row[i] = -1.0
            C.append(row)
            d.append(-lo)
        return cls(dim, C=C, d=d)

    @property
    def rational(self) -> bool:
        return (
            self.C.dtype == object
            or self.C_eq.dtype == object
            or self.d.dtype == object
            or self.d_eq.dtype == object
        )

    def with_ineqs(self, C2, d2, open_new: bool = False) -> "Polyhedron":
        C2 = self._mat(C2, self.dim)
        d2 = self._vec(d2, C2.shape[0])
        base = self.C.shape[0]
        opens = set(self.open_rows)
        if open_new:
            opens.update(range(base, base + C2.shape[0]))
        return Polyhedron(
            self.dim,
            C=_stack(self.C, C2),
            d=_cat(self.d, d2),
            C_eq=self.C_eq,
            d_eq=self.d_eq,
            open_rows=opens,
        )

    def with_eqs(self, E2, f2) -> "Polyhedron":
        E2 = self._mat(E2, self.dim)
        f2 = self._vec(f2, E2.shape[0])
        return Polyhedron(
            self.dim,
            C=self.C,
            d=self.d,
            C_eq=_stack(self.C_eq, E2),
            d_eq=_cat(self.d_eq, f2),
            open_rows=self.open_rows,
        )

    def product(self, other: "Polyhedron") -> "Polyhedron":
        """Cartesian product, variables of ``other`` appended after ours."""
        da, db = self.dim, other.dim
        C = _block_diag(self.C, other.C, da, db)
        C_eq = _block_diag(self.C_eq, other.C_eq, da, db)
        opens = set(self.open_rows)
        opens.update(self.C.shape[0] + i for i in other.open_rows)
        return Polyhedron(
            da + db,
            C=C,
            d=_cat(self.d, other.d),
            C_eq=C_eq,
            d_eq=_cat(self.d_eq, other.d_eq),
            open_rows=opens,
        )

    def closure(self) -> "Polyhedron":
        return Polyhedron(self.dim, self.C, self.d, self.C_eq, self.d_eq, ())

    # -- point queries --------------------------------------------------------

    def contains_point(self, z, tol: float = RANK_TOL, honor_open: bool = False) -> bool:
        z = np.asarray(z, dtype=object if self.rational else float)
        if self.C.shape[0]:
            vals = self.C @ z
            for i in range(self.C.shape[0]):
                slack = self.d[i] - vals[i]
                if honor_open and i in self.open_rows:
                    if not slack > tol:
                        return False
                elif not slack >= -tol:
                    return False
        if self.C_eq.shape[0]:
            vals = self.C_eq @ z
            for i in range(self.C_eq.shape[0]):
                if abs(vals[i] - self.d_eq[i]) > tol:
                    return False
        return True

    def feasible_point(self):
        """Any point of the closure via LP, or None when empty."""
        if self.dim == 0:
            ok = np.all(_as_float(self.d) >= -RANK_TOL) if self.d.shape[0] else True
            ok = ok and (
                np.all(np.abs(_as_float(self.d_eq)) <= RANK_TOL)
                if self.d_eq.shape[0]
                else True
            )
            return np.zeros(0) if ok else None
        res = _lp(
            np.zeros(self.dim),
            A_ub=_as_float(self.C) if self.C.shape[0] else None,
            b_ub=_as_float(self.d) if self.C.shape[0] else None,
            A_eq=_as_float(self.C_eq) if self.C_eq.shape[0] else None,
            b_eq=_as_float(self.d_eq) if self.C_eq.shape[0] else None,
        )
        if res.status == 0:
            return res.x
        return None

    def is_empty(self) -> bool:
        return self.feasible_point() is None

    def is_bounded(self) -> bool:
        """True when the recession cone of the closure is {0}."""
        if self.dim == 0:
            return True
        A_ub = _as_float(self.C) if self.C.shape[0] else None
        b_ub = np.zeros(self.C.shape[0]) if self.C.shape[0] else None
        A_eq = _as_float(self.C_eq) if self.C_eq.shape[0] else None
        b_eq = np.zeros(self.C_eq.shape[0]) if self.C_eq.shape[0] else None
        for j in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[j] = -sign  # maximize sign * e_j
                res = _lp(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq)
                if res.status == 3:
                    return False
                if res.status == 0 and -res.fun > RANK_TOL:
                    return False  # pragma: no cover - cone LPs are 0 or unbounded
        return True

    # -- vertex enumeration ----------------------------------------------------

    def vertices(self) -> VForm:
        """Enumerate vertices (and a spanning set of recession directions).

        Equality rows are eliminated first, then active-set subsets of the
        reduced inequality system are solved.  Exact on rational data.
        For sets with no extreme point, ``anchor`` carries one feasible
        point and ``rays`` a basis of directions; the ray list spans the
        recession cone but is not guaranteed to be a minimal extreme-ray
        list in degenerate cases.
        """
        exact = self.rational
        if self.dim == 0:
            pt = self.feasible_point()
            return VForm([], [], None) if pt is None else VForm([np.zeros(0)], [])
        z0, basis = solve_linear(
            self.C_eq if self.C_eq.shape[0] else np.zeros((0, self.dim)),
            self.d_eq if self.d_eq.shape[0] else [],
            exact,
        )
        if z0 is None:
            return VForm([], [])
        r = len(basis)
        zero = Fraction(0) if exact else 0.0
        if r == 0:
            z = np.array(z0, dtype=object if exact else float)
            if self.contains_point(z, 0 if exact else RANK_TOL):
                return VForm([z], [])
            return VForm([], [])
        # transform inequalities into the reduced coordinates t: z = z0 + N t
        N = np.array(basis, dtype=object if exact else float).T  # dim x r
        if self.C.shape[0]:
            Cm = self.C if exact else _as_float(self.C)
            Cp = Cm @ N
            dp = np.array(
                [self.d[i] - _dot(Cm[i], z0) for i in range(self.C.shape[0])],
                dtype=object if exact else float,
            )
        else:
            Cp = np.zeros((0, r), dtype=object if exact else float)
            dp = np.zeros(0, dtype=object if exact else float)
        k = Cp.shape[0]
        tolf = 0 if exact else RANK_TOL

        verts_t = []
        scale = 1 if exact else max(1.0, float(np.max(np.abs(_as_float(dp)))) if k else 1.0)
        for J in itertools.combinations(range(k), r):
            sub = [list(Cp[i]) for i in J]
            rhs = [dp[i] for i in J]
            sol, null = _gauss(_rows_of(sub, exact), rhs, exact)
            if sol is None or null:
                continue  # singular or rank-deficient
            t = np.array(sol, dtype=object if exact else float)
            vals = Cp @ t if k else np.zeros(0)
            feas = all(vals[i] <= dp[i] + (0 if exact else RANK_TOL * scale) for i in range(k))
            if feas:
                verts_t.append(t)
        # rays: lineality basis plus one-face directions of the reduced cone
        rays_t = self._recession_directions(Cp, r, exact)
        verts = [_affine(z0, N, t, exact) for t in _dedup(verts_t, exact)]
        rays = []
        for t in rays_t:
            v = N @ t
            rays.append(np.array(v, dtype=object if exact else float))
        anchor = None
        if not verts:
            pt = self.feasible_point()
            if pt is not None:
                anchor = pt
        verts.sort(key=_sort_key)
        rays.sort(key=_sort_key)
        return VForm(verts, rays, anchor)

    def _recession_directions(self, Cp, r, exact):
        """Directions spanning { t : Cp t <= 0 }: lineality basis (both
        signs) plus subset-enumerated boundary rays."""
        k = Cp.shape[0]
        out = []
        # lineality space
        _, lin = _gauss(_rows_of(Cp, exact) if k else [], [0] * k, exact) if k else (None, None)
        if k == 0:
            lin = [list(np.eye(r)[j]) for j in range(r)]
        if lin:
            for v in lin:
                arr = np.array(v, dtype=object if exact else float)
                out.append(arr)
                out.append(-arr)
        if k:
            size = r - 1
            if size == 0:
                for sign in (1, -1):
                    t = np.array([sign], dtype=object if exact else float)
                    vals = Cp @ t
                    if all(v <= (0 if exact else RANK_TOL) for v in vals):
                        out.append(t)
            else:
                for J in itertools.combinations(range(k), size):
                    sub = [list(Cp[i]) for i in J]
                    _, null = _gauss(_rows_of(sub, exact), [0] * size, exact)
                    if len(null) != 1:
                        continue
                    t = np.array(null[0], dtype=object if exact else float)
                    for cand in (t, -t):
                        vals = Cp @ cand
                        if all(v <= (0 if exact else RANK_TOL) for v in vals):
                            out.append(cand)
        return _dedup([_normalize_ray(t, exact) for t in out if _nonzero(t)], exact)

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "C": _num_list(self.C),
            "d": _num_list(self.d),
            "C_eq": _num_list(self.C_eq),
            "d_eq": _num_list(self.d_eq),
            "open_rows": sorted(self.open_rows),
        }

    def __repr__(self):
        return (
            f"Polyhedron(dim={self.dim}, ineqs={self.C.shape[0]}, "
            f"eqs={self.C_eq.shape[0]}, open={len(self.open_rows)})"
        )


def _stack(A, B):
    if A.shape[0] == 0:
        return B
    if B.shape[0] == 0:
        return A
    if A.dtype == object or B.dtype == object:
        return np.vstack([A.astype(object), B.astype(object)])
    return np.vstack([A, B])


def _cat(a, b):
    if a.shape[0] == 0:
        return b
    if b.shape[0] == 0:
        return a
    if a.dtype == object or b.dtype == object:
        return np.concatenate([a.astype(object), b.astype(object)])
    return np.concatenate([a, b])


def _block_diag(A, B, da, db):
    rows_a, rows_b = A.shape[0], B.shape[0]
    if rows_a + rows_b == 0:
        return np.zeros((0, da + db))
    exact = A.dtype == object or B.dtype == object
    zero = Fraction(0) if exact else 0.0
    out = np.full((rows_a + rows_b, da + db), zero, dtype=object if exact else float)
    if rows_a:
        out[:rows_a, :da] = A
    if rows_b:
        out[rows_a:, da:] = B
    return out


def _dot(row, vec):
    return sum(a * b for a, b in zip(row, vec))


def _affine(z0, N, t, exact):
    v = N @ t
    out = [z0[i] + v[i] for i in range(len(z0))]
    return np.array(out, dtype=object if exact else float)


def _dedup(points, exact):
    out = []
    for pt in points:
        dup = False
        for q in out:
            if exact:
                if all(a == b for a, b in zip(pt, q)):
                    dup = True
                    break
            else:
                if np.max(np.abs(_as_float(pt) - _as_float(q)), initial=0.0) <= DEDUP_TOL:
                    dup = True
                    break
        if not dup:
            out.append(pt)
    return out


def _nonzero(t):
    return any(v != 0 for v in t)


def _normalize_ray(t, exact):
    # scale only; the sign is meaningful (one-sided directions stay one-sided)
    if exact:
        denom = abs(next(v for v in t if v != 0))
        return np.array([v / denom for v in t], dtype=object)
    arr = _as_float(t)
    return arr / np.linalg.norm(arr)


def _sort_key(v):
    return tuple(float(x) for x in v)


def _num_list(arr):
    if arr.ndim == 1:
        return [_num(v) for v in arr]
    return [[_num(v) for v in row] for row in arr]


def _num(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 1e15 else f


def _lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    return linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds if bounds is not None else [(None, None)] * len(c),
        method="highs",
    )


# ---------------------------------------------------------------------------
# PolySet: finite unions of affine images
# ---------------------------------------------------------------------------


@dataclass
class Piece:
    poly: Polyhedron
    A: np.ndarray
    b: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.A = np.asarray(self.A) if self.A is not None else np.zeros((0, 0))
        if self.A.dtype != object:
            self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b)
        if self.b.dtype != object:
            self.b = np.asarray(self.b, dtype=float)
        if self.A.ndim != 2 or self.A.shape[1] != self.poly.dim:
            raise DimensionError(
                f"map shape {self.A.shape} does not match source dim {self.poly.dim}"
            )
        if self.b.shape != (self.A.shape[0],):
            raise DimensionError("offset length does not match map rows")

    @property
    def target_dim(self) -> int:
        return self.A.shape[0]

    def map_point(self, z):
        if self.poly.dim == 0:
            return np.array(self.b, dtype=self.b.dtype)
        return self.A @ z + self.b

    def to_json(self) -> dict:
        return {
            "source": self.poly.to_json(),
            "A": _num_list(self.A),
            "b": _num_list(self.b),
            "provenance": self.provenance,
        }


@dataclass
class MemberVerdict:
    status: str  # "inside" | "boundary" | "outside"
    piece: str | None
    distance: float

    def __bool__(self):
        return self.status != "outside"


@dataclass
class PolySet:
    """Finite union of affine images of polyhedra in a common target space."""

    target_dim: int
    pieces: list[Piece] = field(default_factory=list)

    def __post_init__(self):
        for pc in self.pieces:
            if pc.target_dim != self.target_dim:
                raise DimensionError("piece target dim mismatch")

    # -- constructors --------------------------------------------------------

    @classmethod
    def empty(cls, dim: int) -> "PolySet":
        return cls(dim, [])

    @classmethod
    def from_point(cls, vec, provenance: str = "point") -> "PolySet":
        vec = np.asarray(vec)
        if vec.dtype != object:
            vec = np.asarray(vec, dtype=float)
        dim = vec.shape[0]
        piece = Piece(Polyhedron.whole(0), np.zeros((dim, 0)), vec, provenance)
        return cls(dim, [piece])

    @classmethod
    def from_points(cls, points, provenance: str = "points") -> "PolySet":
        points = list(points)
        if not points:
            return cls.empty(0)
        dim = len(points[0])
        out = cls(dim, [])
        for i, pt in enumerate(points):
            out.pieces.append(
                Piece(Polyhedron.whole(0), np.zeros((dim, 0)), np.asarray(pt, float),
                      f"{provenance}[{i}]")
            )
        return out

    @classmethod
    def from_hull(cls, points, provenance: str = "hull") -> "PolySet":
        """Convex hull of finitely many points as a single piece: the
        simplex of weights mapped through the generator matrix."""
        pts = [np.asarray(p, dtype=float) for p in points]
        if not pts:
            return cls.empty(0)
        k = len(pts)
        dim = pts[0].shape[0]
        simplex = Polyhedron(
            k,
            C=-np.eye(k),
            d=np.zeros(k),
            C_eq=np.ones((1, k)),
            d_eq=np.ones(1),
        )
        A = np.column_stack(pts) if dim else np.zeros((0, k))
        return cls(dim, [Piece(simplex, A, np.zeros(dim), provenance)])

    # -- algebra ---------------------------------------------------------------

    def union(self, other: "PolySet") -> "PolySet":
        if other.target_dim != self.target_dim:
            raise DimensionError("union of sets in different spaces")
        return PolySet(self.target_dim, list(self.pieces) + list(other.pieces))

    def scale(self, t: float) -> "PolySet":
        """Positive scaling t * S."""
        if not t > 0:
            raise ValueError("scale factor must be positive")
        out = []
        for pc in self.pieces:
            tt = Fraction(t) if pc.A.dtype == object else float(t)
            out.append(Piece(pc.poly, pc.A * tt, pc.b * tt, pc.provenance))
        return PolySet(self.target_dim, out)

    def map(self, M, c=None) -> "PolySet":
        M = np.asarray(M, dtype=float)
        c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)
        out = [
            Piece(pc.poly, M @ _as_float(pc.A), M @ _as_float(pc.b) + c, pc.provenance)
            for pc in self.pieces
        ]
        return PolySet(M.shape[0], out)

    def minkowski(self, other: "PolySet") -> "PolySet":
        if other.target_dim != self.target_dim:
            raise DimensionError("sum of sets in different spaces")
        out = []
        for pa in self.pieces:
            for pb in other.pieces:
                poly = pa.poly.product(pb.poly)
                A = _hcat(pa.A, pb.A)
                b = _add_vec(pa.b, pb.b)
                out.append(Piece(poly, A, b, f"{pa.provenance}+{pb.provenance}"))
        return PolySet(self.target_dim, out)

    def sorted_pieces(self) -> "PolySet":
        return PolySet(self.target_dim, sorted(self.pieces, key=lambda p: p.provenance))

    # -- queries -----------------------------------------------------------------

    def member(self, point, tol: float = 1e-9) -> MemberVerdict:
        """Membership with an exactness verdict.

        Solves, per piece, min_t { t : z in source, |A z + b - point| <= t }.
        A point within tol of the closure refines against the open rows:
        interior of every open row -> "inside", touching one -> "boundary".
        The reported distance is the best infinity-norm LP value, a valid
        lower bound for the Euclidean distance to the set.
        """
        point = np.asarray(point, dtype=float)
        if point.shape != (self.target_dim,):
            raise DimensionError("query point has wrong dimension")
        outside_piece, outside_dist = None, float("inf")
        boundary_piece = None
        for pc in self.pieces:
            t_star, _ = _piece_distance(pc, point)
            if t_star is None:
                continue
            if t_star > tol:
                if t_star < outside_dist:
                    outside_piece, outside_dist = pc.provenance, t_star
                continue
            status = _refine_open(pc, point, tol)
            if status == "inside":
                return MemberVerdict("inside", pc.provenance, 0.0)
            if boundary_piece is None:
                boundary_piece = pc.provenance
        if boundary_piece is not None:
            return MemberVerdict("boundary", boundary_piece, 0.0)
        return MemberVerdict("outside", outside_piece, outside_dist)

    def coord_range(self, i: int):
        """Range of coordinate i over the set union: (lo, hi), infinite
        when unbounded, (inf, -inf) when the set is empty."""
        lo, hi = float("inf"), float("-inf")
        for pc in self.pieces:
            row = _as_float(pc.A[i])
            off = float(pc.b[i])
            if not np.any(np.abs(row) > 0) or pc.poly.dim == 0:
                if pc.poly.is_empty():
                    continue
                lo, hi = min(lo, off), max(hi, off)
                continue
            for sign in (1.0, -1.0):
                res = _lp(
                    sign * row,
                    A_ub=_as_float(pc.poly.C) if pc.poly.C.shape[0] else None,
                    b_ub=_as_float(pc.poly.d) if pc.poly.C.shape[0] else None,
                    A_eq=_as_float(pc.poly.C_eq) if pc.poly.C_eq.shape[0] else None,
                    b_eq=_as_float(pc.poly.d_eq) if pc.poly.C_eq.shape[0] else None,
                )
                if res.status == 3:
                    if sign > 0:
                        lo = float("-inf")
                    else:
                        hi = float("inf")
                elif res.status == 0:
                    val = res.fun if sign > 0 else -res.fun
                    val += off
                    lo, hi = min(lo, val), max(hi, val)
        return lo, hi

    def is_empty(self) -> bool:
        return all(pc.poly.is_empty() for pc in self.pieces)

    def is_zero_singleton(self, tol: float = 1e-9) -> bool:
        """True when the set is nonempty and equals {0} within tol.

        Uses exact affine-hull reasoning when a piece carries rational
        data and its map kills the hull directions; otherwise falls back
        to coordinate-range LPs.
        """
        nonempty = False
        for pc in self.pieces:
            if pc.poly.is_empty():
                continue
            nonempty = True
            val = _piece_constant_value(pc)
            if val is not None:
                if any(abs(float(v)) > tol for v in val):
                    return False
                continue
            for i in range(self.target_dim):
                lo, hi = PolySet(self.target_dim, [pc]).coord_range(i)
                if not (-tol <= lo and hi <= tol):
                    return False
        return nonempty

    def sample_points(self, count: int, rng) -> list:
        """Draw points from the union: convex combinations of each piece's
        vertices, plus pushes along recession directions."""
        out = []
        per = max(1, count // max(1, len(self.pieces)))
        for pc in self.pieces:
            vf = pc.poly.vertices()
            base = [_as_float(v) for v in vf.vertices]
            if vf.anchor is not None:
                base.append(_as_float(vf.anchor))
            if not base:
                continue
            rays = [_as_float(r) for r in vf.rays]
            for _ in range(per):
                w = rng.random(len(base))
                w = w / w.sum()
                z = sum(wi * vi for wi, vi in zip(w, base))
                if rays and rng.random() < 0.5:
                    z = z + rng.random() * 2.0 * rays[rng.integers(len(rays))]
                out.append(_as_float(pc.map_point(z)))
            if len(out) >= count:
                break
        return out[:count]

    def to_json(self) -> dict:
        return {
            "target_dim": self.target_dim,
            "pieces": [pc.to_json() for pc in self.sorted_pieces().pieces],
        }


def _hcat(A, B):
    if A.shape[1] == 0:
        return B if B.shape[1] else np.zeros((A.shape[0], 0))
    if B.shape[1] == 0:
        return A
    return np.hstack([_as_float(A), _as_float(B)])


def _add_vec(a, b):
    return _as_float(a) + _as_float(b)


def _piece_distance(pc: Piece, point):
    """min_t { t : z in closure(source), |A z + b - point|_inf <= t }."""
    src = pc.poly
    nz, dimt = src.dim, pc.target_dim
    nvar = nz + 1
    c = np.zeros(nvar)
    c[-1] = 1.0
    A_ub_rows, b_ub = [], []
    if src.C.shape[0]:
        A_ub_rows.append(np.hstack([_as_float(src.C), np.zeros((src.C.shape[0], 1))]))
        b_ub.append(_as_float(src.d))
    Af = _as_float(pc.A)
    bf = _as_float(pc.b)
    ones = np.ones((dimt, 1))
    A_ub_rows.append(np.hstack([Af, -ones]))
    b_ub.append(point - bf)
    A_ub_rows.append(np.hstack([-Af, -ones]))
    b_ub.append(bf - point)
    A_ub = np.vstack(A_ub_rows)
    b_ub = np.concatenate(b_ub)
    A_eq = b_eq = None
    if src.C_eq.shape[0]:
        A_eq = np.hstack([_as_float(src.C_eq), np.zeros((src.C_eq.shape[0], 1))])
        b_eq = _as_float(src.d_eq)
    bounds = [(None, None)] * nz + [(0, None)]
    res = _lp(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds)
    if res.status != 0:
        return None, None
    return float(res.fun), res.x[:nz]


def _refine_open(pc: Piece, point, tol: float):
    """Given the closure touches ``point``, decide inside vs boundary with
    respect to the open rows: maximize the worst open-row margin subject
    to mapping onto the point (within tol)."""
    src = pc.poly
    if not src.open_rows:
        return "inside"
    nz = src.dim
    nvar = nz + 1  # z, mu
    c = np.zeros(nvar)
    c[-1] = -1.0  # maximize mu
    rows, rhs = [], []
    Cf = _as_float(src.C)
    df = _as_float(src.d)
    for i in range(src.C.shape[0]):
        row = np.zeros(nvar)
        row[:nz] = Cf[i]
        if i in src.open_rows:
            row[-1] = 1.0
        rows.append(row)
        rhs.append(df[i])
    Af = _as_float(pc.A)
    bf = _as_float(pc.b)
    for i in range(pc.target_dim):
        row = np.zeros(nvar)
        row[:nz] = Af[i]
        rows.append(row.copy())
        rhs.append(point[i] - bf[i] + tol)
        row[:nz] = -Af[i]
        rows.append(row)
        rhs.append(bf[i] - point[i] + tol)
    A_eq = b_eq = None
    if src.C_eq.shape[0]:
        A_eq = np.hstack([_as_float(src.C_eq), np.zeros((src.C_eq.shape[0], 1))])
        b_eq = _as_float(src.d_eq)
    bounds = [(None, None)] * nz + [(None, 1.0)]
    res = _lp(c, A_ub=np.vstack(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=b_eq, bounds=bounds)
    if res.status != 0:
        return "boundary"
    mu = -res.fun
    return "inside" if mu > tol else "boundary"


def _piece_constant_value(pc: Piece):
    """Exact image value when the piece's map is constant on the affine
    hull of its equality rows; None when that cannot be certified."""
    src = pc.poly
    exact = src.rational or pc.A.dtype == object
    if src.dim == 0:
        return list(pc.b)
    z0, basis = solve_linear(
        src.C_eq if src.C_eq.shape[0] else np.zeros((0, src.dim)),
        src.d_eq if src.C_eq.shape[0] else [],
        exact,
    )
    if z0 is None:
        return None
    A = pc.A if exact else _as_float(pc.A)
    for v in basis:
        img = A @ np.array(v, dtype=object if exact else float)
        if exact:
            if any(val != 0 for val in img):
                return None
        elif np.max(np.abs(_as_float(img)), initial=0.0) > RANK_TOL:
            return None
    val = A @ np.array(z0, dtype=object if exact else float) + pc.b
    return list(val)


# ---------------------------------------------------------------------------
# Convex hulls of point clouds with membership certificates
# ---------------------------------------------------------------------------


@dataclass
class HullCertificate:
    """Convex-combination witness: point = sum_i weights[i] * generators[support[i]],
    with at most dim+1 supports."""

    point: np.ndarray
    support: list[int]
    weights: list[float]

    def reconstruct(self, generators) -> np.ndarray:
        return sum(w * np.asarray(generators[i], float) for i, w in zip(self.support, self.weights))


class ConvexHullSet:
    """Convex hull of finitely many generators with LP membership and
    Caratheodory-reduced certificates."""

    def __init__(self, generators):
        self.generators = [np.asarray(g, dtype=float) for g in generators]
        if not self.generators:
            raise ValueError("need at least one generator")
        self.dim = self.generators[0].shape[0]

    def extreme_indices(self) -> list[int]:
        """Indices of generators not representable by the others."""
        out = []
        for i in range(len(self.generators)):
            others = [g for j, g in enumerate(self.generators) if j != i]
            if not others or not _in_hull(self.generators[i], others, 1e-9):
                out.append(i)
        return out

    def member(self, point, tol: float = 1e-9) -> bool:
        return _in_hull(np.asarray(point, float), self.generators, tol)

    def certificate(self, point, tol: float = 1e-9) -> HullCertificate | None:
        """Weights over at most dim+1 generators reconstructing ``point``."""
        point = np.asarray(point, dtype=float)
        w = _hull_weights(point, self.generators, tol)
        if w is None:
            return None
        support = [i for i, wi in enumerate(w) if wi > 1e-12]
        weights = [w[i] for i in support]
        support, weights = _caratheodory_reduce(point, self.generators, support, weights)
        return HullCertificate(point=point, support=support, weights=weights)


def convex_hull(points) -> ConvexHullSet:
    return ConvexHullSet(points)


def _in_hull(point, generators, tol) -> bool:
    return _hull_weights(point, generators, tol) is not None


def _hull_weights(point, generators, tol):
    k = len(generators)
    dim = len(point)
    G = np.column_stack([np.asarray(g, float) for g in generators]) if dim else np.zeros((0, k))
    A_eq = np.vstack([G, np.ones((1, k))])
    b_eq = np.concatenate([point, [1.0]])
    res = _lp(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k)
    if res.status != 0:
        return None
    w = np.clip(res.x, 0.0, None)
    recon = G @ w if dim else np.zeros(0)
    if np.max(np.abs(recon - point), initial=0.0) > max(tol, 1e-8):
        return None
    return list(w / max(w.sum(), 1e-300))


def _caratheodory_reduce(point, generators, support, weights):
    """Prune a convex combination to at most dim+1 supports by walking
    along null directions of the lifted generator matrix."""
    dim = len(point)
    support = list(support)
    weights = [float(w) for w in weights]
    while len(support) > dim + 1:
        G = np.vstack([
            np.column_stack([generators[i] for i in support]) if dim else np.zeros((0, len(support))),
            np.ones((1, len(support))),
        ])
        _, null = _gauss([list(r) for r in G], [0.0] * G.shape[0], False)
        if not null:
            break  # pragma: no cover - rank bound guarantees a null vector
        nu = np.array(null[0], dtype=float)
        if np.all(nu <= 1e-15):
            nu = -nu
        steps = [
            (weights[j] / nu[j], j) for j in range(len(support)) if nu[j] > 1e-15
        ]
        t, drop = min(steps)
        weights = [w - t * nv for w, nv in zip(weights, nu)]
        del support[drop], weights[drop]
        # renormalize tiny drift
        total = sum(weights)
        weights = [max(w, 0.0) / total for w in weights]
    order = np.argsort(support)
    return [support[i] for i in order], [weights[i] for i in order]


# ---------------------------------------------------------------------------
# V-form to H-form
# ---------------------------------------------------------------------------


def polyhedron_from_vertices(points) -> Polyhedron:
    """H-form of the convex hull of a finite point cloud (bounded sets only).

    Full-dimensional clouds go through Qhull; degenerate clouds are
    reduced to their affine hull first and the complement directions
    become equality rows.
    """
    pts = np.array([np.asarray(p, float) for p in points], dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DimensionError("need a nonempty 2-D point array")
    npts, dim = pts.shape
    center = pts.mean(axis=0)
    shifted = pts - center
    if npts == 1:
        return Polyhedron(dim, C_eq=np.eye(dim), d_eq=pts[0])
    u, s, vt = np.linalg.svd(shifted, full_matrices=True)
    rank = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 1.0)))
    basis = vt[:rank].T  # dim x rank
    normals = vt[rank:]  # (dim-rank) x dim
    reduced = shifted @ basis
    C_eq = normals
    d_eq = normals @ center if normals.shape[0] else np.zeros(0)
    if rank == 0:
        return Polyhedron(dim, C_eq=np.eye(dim), d_eq=center)
    if rank == 1:
        lo, hi = float(reduced.min()), float(reduced.max())
        # rows in the original coordinates: lo <= basis^T (z - center) <= hi
        C = np.vstack([basis[:, 0], -basis[:, 0]])
        d = np.array([hi + float(basis[:, 0] @ center), -lo - float(basis[:, 0] @ center)])
        return Polyhedron(dim, C=C, d=d, C_eq=C_eq, d_eq=d_eq)
    from scipy.spatial import ConvexHull as _QHull

    hull = _QHull(reduced)
    # facet rows: a^T t <= b in reduced coords; lift t = basis^T (z - center)
    A_red = hull.equations[:, :-1]
    b_red = -hull.equations[:, -1]
    C = A_red @ basis.T
    d = b_red + C @ center
    return Polyhedron(dim, C=C, d=d, C_eq=C_eq, d_eq=d_eq)


# Convenience wrappers matching the public operation names.


def vertices(P: Polyhedron) -> VForm:
    return P.vertices()


def member(point, S: PolySet, tol: float = 1e-9) -> MemberVerdict:
    return S.member(point, tol)


def scale(S: PolySet, t: float) -> PolySet:
    return S.scale(t)
