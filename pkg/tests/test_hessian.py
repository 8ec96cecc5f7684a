"""Second-order estimates: smooth sensitivities, the composed cases,
and the exact linear-program routes, all against hand-computed values."""

from __future__ import annotations

import numpy as np
import pytest

from valfun.errors import CaseRoutingError, DegeneracyError, HypothesisError
from valfun.hessian import (
    HessianQuery,
    compute,
    hessian_single_lambda,
    hessian_single_s,
    hessian_single_single,
    hessian_unperturbed,
    lp_cost_parametric_data,
    lp_lhs_hessian,
    lp_lhs_rhs_hessian,
    lp_rhs_parametric_data,
    route,
    sensitivity_system,
)
from valfun.model import make_kkt

from conftest import load_instance


def _kkt(problem, point_name="base"):
    pt = problem.points[point_name]
    return make_kkt(problem, pt.x, pt.minimizers[0], pt.u)


# ---------------------------------------------------------------------------
# Smooth sensitivities
# ---------------------------------------------------------------------------


def test_sensitivity_active_linear_constraint():
    # minimizer rides the lower box face y = x - 2: unit solution slope,
    # constant multiplier
    res = sensitivity_system(load_instance("slide"), _kkt(load_instance("slide")))
    assert res.ds == pytest.approx(np.array([[1.0]]))
    assert res.du == pytest.approx(np.array([[0.0], [0.0]]))
    assert res.residual < 1e-12


def test_sensitivity_multiplier_slope():
    res = sensitivity_system(load_instance("shiftbox"), _kkt(load_instance("shiftbox")))
    assert res.ds == pytest.approx(np.array([[1.0]]))
    assert res.du == pytest.approx(np.array([[-2.0], [0.0]]))


def test_sensitivity_interior_curvature():
    res = sensitivity_system(
        load_instance("quarticshift"), _kkt(load_instance("quarticshift"))
    )
    assert res.ds == pytest.approx(np.array([[1.0]]), abs=1e-12)
    assert res.du == pytest.approx(np.array([[0.0]]))


def test_sensitivity_rejects_weak_activity():
    prob = load_instance("quadfit")
    kkt = _kkt(prob, "kink")
    with pytest.raises(DegeneracyError):
        sensitivity_system(prob, kkt)


def test_sensitivity_rejects_dependent_gradients():
    prob = load_instance("twoactive")
    pt = prob.points["base"]
    kkt = make_kkt(prob, pt.x, pt.minimizers[0], [1.0, 0.0])
    with pytest.raises(DegeneracyError):
        sensitivity_system(prob, kkt)


# ---------------------------------------------------------------------------
# Fixed feasible set
# ---------------------------------------------------------------------------


def test_unperturbed_smooth_single():
    # value function vanishes identically near the base point
    prob = load_instance("quadfit")
    est = hessian_unperturbed(prob, HessianQuery([0.3], [0.0], [1.0]))
    assert est.theorem == "unperturbed-smooth"
    assert est.equality
    assert est.result.member([0.0])
    assert not est.result.member([0.5])


def test_unperturbed_composed_constant_objective():
    # y-free objective: the branch composition still recovers the plain
    # second derivative of x^2
    prob = load_instance("constantobj")
    est = hessian_unperturbed(prob, HessianQuery([0.5], [1.0], [1.0]))
    assert est.theorem == "unperturbed-composed"
    assert est.result.member([2.0])


def test_unperturbed_selection_mode():
    # both maximum-magnitude minimizers carry the base gradient; their
    # smooth estimates agree on {0}
    prob = load_instance("multiSxfree")
    est = hessian_unperturbed(
        prob, HessianQuery([1.0], [-1.0], [1.0]), smode="multi"
    )
    assert est.theorem == "unperturbed-selection"
    assert est.result.member([0.0])
    assert not est.result.member([0.1])


def test_unperturbed_selection_needs_matching_gradient():
    prob = load_instance("multiSxfree")
    with pytest.raises(HypothesisError):
        hessian_unperturbed(prob, HessianQuery([1.0], [0.5], [1.0]), smode="multi")


def test_unperturbed_hull_mode():
    # base gradient strictly between the two objective gradients +-1
    prob = load_instance("bilinear1")
    est = hessian_unperturbed(
        prob, HessianQuery([0.0], [0.0], [1.0]), smode="caratheodory"
    )
    assert est.theorem == "unperturbed-hull"
    assert est.result.member([0.0])
    assert est.supports


# ---------------------------------------------------------------------------
# Unique minimizer, unique multiplier
# ---------------------------------------------------------------------------


def test_single_single_zero_curvature():
    prob = load_instance("slide")
    est = hessian_single_single(prob, HessianQuery([1.0], [1.0], [2.0]))
    assert est.theorem == "single-single-smooth"
    assert est.equality
    assert est.result.member([0.0])


def test_single_single_shifted_quadratic():
    prob = load_instance("shiftbox")
    est = hessian_single_single(prob, HessianQuery([1.0], [-2.0], [1.0]))
    assert est.equality
    assert est.result.member([2.0])
    assert not est.result.member([1.9])


def test_single_single_negative_curvature():
    prob = load_instance("quarticshift")
    est = hessian_single_single(prob, HessianQuery([0.0], [0.0], [1.5]))
    assert est.result.member([-3.0])


def test_single_single_cross_term():
    # phi(x1, x2) = -x1 x2: Hessian is the off-diagonal flip
    prob = load_instance("rhsbox")
    est = hessian_single_single(prob, HessianQuery([1.0, 3.0], [-3.0, -1.0], [1.0, 0.0]))
    assert est.equality
    assert est.result.member([0.0, -1.0])
    assert not est.result.member([0.0, 0.0])


def test_single_single_composed_at_degenerate_point():
    # weakly active box face: the smooth system is refused and the
    # branch composition covers both one-sided curvatures
    prob = load_instance("quadfit")
    est = hessian_single_single(prob, HessianQuery([1.0], [0.0], [1.0]))
    assert est.theorem == "single-single-composed"
    assert not est.equality
    assert est.result.member([0.0])
    assert est.result.member([2.0])
    failed = [h for h in est.hypotheses if h.name == "kkt-system-regular"]
    assert failed and failed[0].status == "failed"


# ---------------------------------------------------------------------------
# Multiplier polytope / several minimizers
# ---------------------------------------------------------------------------


def test_single_s_duplicated_rows_collapse():
    # value function is x along the duplicated active face; every
    # multiplier vertex and branch composition lands on zero curvature
    prob = load_instance("twoactive")
    est = hessian_single_s(prob, HessianQuery([0.0], [1.0], [1.0]))
    assert est.result.member([0.0])
    assert not est.result.member([0.5])
    assert not est.result.member([-0.5])
    names = [h.name for h in est.hypotheses]
    assert any(n.startswith("multiplier-vertex-union") for n in names)


def test_single_lambda_selection():
    # two symmetric minimizers share the Lagrangian gradient (-1, -2)
    # and the same curvature [[0, -2], [-2, -2]]
    prob = load_instance("multiS")
    est = hessian_single_lambda(prob, HessianQuery([1.0, 0.0], [-1.0, -2.0], [1.0, 0.0]))
    assert est.theorem == "single-lambda-selection"
    assert est.result.member([0.0, -2.0])
    assert not est.result.member([0.0, 0.0])


def test_single_lambda_second_column():
    prob = load_instance("multiS")
    est = hessian_single_lambda(prob, HessianQuery([1.0, 0.0], [-1.0, -2.0], [0.0, 1.0]))
    assert est.result.member([-2.0, -2.0])


def test_single_lambda_hull_mode():
    prob = load_instance("multiS")
    est = hessian_single_lambda(
        prob,
        HessianQuery([1.0, 0.0], [-1.0, -2.0], [1.0, 0.0]),
        mode="caratheodory",
    )
    assert est.theorem == "single-lambda-hull"
    assert est.result.member([0.0, -2.0])


def test_single_lambda_selection_needs_match():
    prob = load_instance("multiS")
    with pytest.raises(HypothesisError):
        hessian_single_lambda(
            prob,
            HessianQuery([1.0, 0.0], [4.0, 4.0], [1.0, 0.0]),
            mode="selection",
        )


# ---------------------------------------------------------------------------
# Exact linear-program routes
# ---------------------------------------------------------------------------


def test_lp_objective_weights_linearity_region():
    # phi(x) = -|x|: linear around 0.5, so the second-order set is {0}
    est = lp_lhs_hessian(
        [[1], [-1]], [1, 1], HessianQuery([0.5], [-1.0], [1.0])
    )
    assert est.exact
    assert est.result.is_zero_singleton(tol=0.0)


def test_lp_objective_weights_vertex_point():
    A = [[1, 0], [0, 1], [-1, 0], [0, -1]]
    b = [1, 1, 0, 0]
    est = lp_lhs_hessian(A, b, HessianQuery([1.0, 2.0], [0.0, 0.0], [1.0, 1.0]))
    assert est.result.is_zero_singleton(tol=0.0)


def test_lp_objective_weights_fan_point():
    # first weight zero: the minimizing face is an edge and the
    # second-order set fans out along the first coordinate
    A = [[1, 0], [0, 1], [-1, 0], [0, -1]]
    b = [1, 1, 0, 0]
    est = lp_lhs_hessian(A, b, HessianQuery([0.0, 1.0], [0.0, 0.0], [0.0, 1.0]))
    assert est.result.member([0.0, 0.0])
    assert est.result.member([5.0, 0.0])
    assert est.result.member([-3.0, 0.0])
    assert not est.result.member([0.0, 0.5])
    lo, hi = est.result.coord_range(0)
    assert lo == -np.inf and hi == np.inf
    lo, hi = est.result.coord_range(1)
    assert lo == pytest.approx(0.0) and hi == pytest.approx(0.0)


def test_lp_objective_weights_rejects_bad_base():
    A = [[1], [-1]]
    with pytest.raises(HypothesisError):
        lp_lhs_hessian(A, [1, 1], HessianQuery([0.5], [2.0], [1.0]))  # infeasible
    with pytest.raises(HypothesisError):
        lp_lhs_hessian(A, [1, 1], HessianQuery([0.5], [1.0], [1.0]))  # not optimal


def test_lp_rhs_exact_zero():
    # phi(x) = -x2 for the split box: affine, second-order set {(0, 0)}
    est = lp_lhs_rhs_hessian([[1], [-1]], HessianQuery([2.0, 1.0], [0.0, -1.0], [1.0, 1.0]))
    assert est.exact
    assert est.result.member([0.0, 0.0])
    assert est.result.is_zero_singleton(tol=0.0)


def test_lp_rhs_cost_inference_matches_explicit():
    q = HessianQuery([2.0, 1.0], [0.0, -1.0], [1.0, 1.0])
    inferred = lp_lhs_rhs_hessian([[1], [-1]], q)
    explicit = lp_lhs_rhs_hessian([[1], [-1]], q, cost=[1])
    assert inferred.result.is_zero_singleton(tol=0.0)
    assert explicit.result.is_zero_singleton(tol=0.0)
    note = [h for h in inferred.hypotheses if h.name == "base-covector-multiplier"]
    assert note and "inferred" in note[0].detail


def test_lp_rhs_invalid_covector_gives_empty_set():
    # positive first slot means a negative pinned multiplier: no graph point
    q = HessianQuery([2.0, 1.0], [0.5, -1.0], [1.0, 1.0])
    est = lp_lhs_rhs_hessian([[1], [-1]], q)
    assert est.result.is_empty()
    rec = [h for h in est.hypotheses if h.name == "base-covector-multiplier"]
    assert rec and rec[0].status == "failed"


def test_lp_rhs_inconsistent_cost_gives_empty_set():
    q = HessianQuery([2.0, 1.0], [0.0, -1.0], [1.0, 1.0])
    est = lp_lhs_rhs_hessian([[1], [-1]], q, cost=[2])
    assert est.result.is_empty()


# ---------------------------------------------------------------------------
# Structure detection and dispatch
# ---------------------------------------------------------------------------


def test_structure_detection_tables():
    assert lp_cost_parametric_data(load_instance("bilinear1")) is not None
    assert lp_cost_parametric_data(load_instance("lp_box01")) is not None
    A, b = lp_cost_parametric_data(load_instance("lp_skew"))
    assert A.tolist() == [[2], [-1]] and b.tolist() == [1, 1]
    assert lp_cost_parametric_data(load_instance("quadfit")) is None
    assert lp_cost_parametric_data(load_instance("rhsbox")) is None

    A, cost = lp_rhs_parametric_data(load_instance("rhslp"))
    assert A.tolist() == [[1], [-1]] and cost.tolist() == [1]
    assert lp_rhs_parametric_data(load_instance("rhsbox")) is None
    assert lp_rhs_parametric_data(load_instance("bilinear1")) is None


ROUTES = {
    "bilinear1": "lp-lhs",
    "bilinear2d": "lp-lhs",
    "degenlp": "lp-lhs",
    "lp_box01": "lp-lhs",
    "lp_simplex": "lp-lhs",
    "lp_skew": "lp-lhs",
    "rhslp": "lp-lhs-rhs",
    "quadfit": "unperturbed",
    "absmin": "unperturbed",
    "constantobj": "unperturbed",
    "multiSxfree": "unperturbed",
    "bilinear1_kink_has_no_entry": None,
}


@pytest.mark.parametrize(
    "name,expected",
    [(k, v) for k, v in ROUTES.items() if v is not None],
)
def test_route_by_structure(name, expected):
    case, _ = route(load_instance(name))
    assert case == expected


def test_route_with_query_counts_minimizers():
    prob = load_instance("rhsbox")
    case, info = route(prob, HessianQuery([1.0, 3.0], [-3.0, -1.0], [1.0, 0.0]))
    assert case == "single-single"
    prob = load_instance("twoactive")
    case, info = route(prob, HessianQuery([0.0], [1.0], [1.0]))
    assert case == "single-s"
    assert info["multiplier_counts"] == [2]
    prob = load_instance("multiS")
    case, info = route(prob, HessianQuery([1.0, 0.0], [-1.0, -2.0], [1.0, 0.0]))
    assert case == "single-lambda"


def test_compute_end_to_end_routes():
    # exact LP route straight from problem structure
    est = compute(load_instance("rhslp"), HessianQuery([2.0, 1.0], [0.0, -1.0], [1.0, 1.0]))
    assert est.case == "lp-lhs-rhs"
    assert est.result.is_zero_singleton(tol=0.0)
    # smooth general route with membership precheck logged
    est = compute(load_instance("shiftbox"), HessianQuery([1.0], [-2.0], [1.0]))
    assert est.case == "single-single"
    assert est.result.member([2.0])
    assert any(h.name == "base-gradient-membership" for h in est.hypotheses)


def test_compute_rejects_foreign_base_gradient():
    prob = load_instance("quadfit")
    with pytest.raises(HypothesisError):
        compute(prob, HessianQuery([0.3], [5.0], [1.0]))


def test_compute_rejects_mismatched_case():
    prob = load_instance("shiftbox")
    with pytest.raises(CaseRoutingError):
        compute(prob, HessianQuery([1.0], [-2.0], [1.0], case="unperturbed"))


def test_estimates_scale_with_the_covector():
    # positive homogeneity spot-checks across three routes
    prob = load_instance("rhsbox")
    for t in (2.0, 0.5, 3.7):
        est = hessian_single_single(
            prob, HessianQuery([1.0, 3.0], [-3.0, -1.0], [t, 0.0])
        )
        assert est.result.member([0.0, -t])
    A = [[1, 0], [0, 1], [-1, 0], [0, -1]]
    b = [1, 1, 0, 0]
    for t in (2.0, 0.5):
        est = lp_lhs_hessian(A, b, HessianQuery([0.0, 1.0], [0.0, 0.0], [0.0, t]))
        assert est.result.member([5.0, 0.0])
        assert not est.result.member([0.0, 0.5 * t])
