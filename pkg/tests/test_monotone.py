from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvldp.monotone import (
    ConvergenceError,
    ConvexDomain,
    DomainEmptyError,
    GraphSample,
    MonotoneOperator,
    cepa_diagnostic,
    graph_monotonicity_check,
    project,
    resolvent,
    variation_inequality_check,
    yosida,
)
from mvldp.paths import FiniteVariationPath, GridMismatchError, SamplePath, TimeGrid

coords = st.floats(-10, 10, allow_nan=False)


def domains():
    return [
        ConvexDomain.half_line(),
        ConvexDomain.half_space([1.0, 2.0], 1.0),
        ConvexDomain.box([0.0, 0.0], [1.0, 1.0]),
        ConvexDomain.box([0.0, -np.inf], [np.inf, 2.0]),
        ConvexDomain.ball([1.0, -1.0], 2.0),
        ConvexDomain.polyhedron([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0]),
    ]


# -- projection ----------------------------------------------------------------

def test_half_line_projection():
    assert project(ConvexDomain.half_line(), [-1.0]) == pytest.approx([0.0])


def test_box_projection_is_clamp():
    box = ConvexDomain.box([0, 0], [1, 1])
    np.testing.assert_array_equal(project(box, [2.0, -3.0]), [1.0, 0.0])


def test_ball_projection_radial():
    ball = ConvexDomain.ball([0.0, 0.0], 1.0)
    np.testing.assert_allclose(project(ball, [3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_polyhedron_simplex_projection_matches_sorting_oracle(rng):
    # probability-simplex-like region {x >= 0, sum x <= 1}; compare with a brute-force QP oracle
    from scipy.optimize import minimize

    dom = ConvexDomain.polyhedron([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    for _ in range(20):
        p = rng.normal(scale=2.0, size=2)
        res = minimize(lambda x: np.sum((x - p) ** 2), np.array([0.2, 0.2]), method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda x: x},
                                    {"type": "ineq", "fun": lambda x: 1 - x.sum()}], tol=1e-14)
        np.testing.assert_allclose(project(dom, p), res.x, atol=1e-7)


@pytest.mark.parametrize("dom", domains(), ids=lambda d: d.kind)
def test_projection_lands_inside_and_is_idempotent(dom, rng):
    P = rng.normal(scale=4.0, size=(200, dom.dim))
    Q = dom.project(P)
    assert np.all(dom.contains(Q, tol=1e-10))
    np.testing.assert_allclose(dom.project(Q), Q, atol=1e-12)


@pytest.mark.parametrize("dom", domains(), ids=lambda d: d.kind)
def test_projection_nonexpansive(dom, rng):
    P = rng.normal(scale=4.0, size=(200, dom.dim))
    R = rng.normal(scale=4.0, size=(200, dom.dim))
    lhs = np.linalg.norm(dom.project(P) - dom.project(R), axis=1)
    assert np.all(lhs <= np.linalg.norm(P - R, axis=1) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2))
def test_inside_points_are_fixed(p):
    dom = ConvexDomain.ball([0.0, 0.0], 100.0)
    np.testing.assert_array_equal(dom.project(np.array(p)), np.array(p))


def test_infeasible_polyhedron_rejected():
    with pytest.raises(DomainEmptyError):
        ConvexDomain.polyhedron([[1.0], [-1.0]], [0.0, -1.0])  # x <= 0 and x >= 1


def test_flat_polyhedron_rejected():
    with pytest.raises(DomainEmptyError):
        ConvexDomain.polyhedron([[1.0], [-1.0]], [0.0, 0.0])  # x = 0 has empty interior


def test_zero_normal_rejected():
    with pytest.raises(ValueError):
        ConvexDomain.polyhedron([[0.0, 0.0]], [1.0])


def test_user_interior_point_validated():
    ConvexDomain.half_space([1.0], 1.0, interior_point=[0.0])
    with pytest.raises(DomainEmptyError):
        ConvexDomain.half_space([1.0], 1.0, interior_point=[1.0])


# -- resolvent and Yosida ------------------------------------------------------

def test_zero_resolvent_identity():
    op = MonotoneOperator.zero(2)
    np.testing.assert_array_equal(resolvent(op, 3.7, [1.0, -2.0]), [1.0, -2.0])
    np.testing.assert_array_equal(yosida(op, 3.7, [1.0, -2.0]), [0.0, 0.0])


def test_linear_resolvent_and_yosida():
    op = MonotoneOperator.linear([[2.0]])
    assert resolvent(op, 0.5, [3.0]) == pytest.approx([1.5])
    assert yosida(op, 0.5, [3.0]) == pytest.approx([3.0])


def test_indicator_resolvent_and_yosida():
    op = MonotoneOperator.indicator(ConvexDomain.half_line())
    assert resolvent(op, 0.1, [-0.4]) == pytest.approx([0.0])
    assert yosida(op, 0.1, [-0.4]) == pytest.approx([-4.0])


@pytest.mark.parametrize("dom", domains(), ids=lambda d: d.kind)
def test_indicator_resolvent_lambda_independent(dom, rng):
    op = MonotoneOperator.indicator(dom)
    P = rng.normal(scale=3.0, size=(50, dom.dim))
    for lam in (1e-3, 0.5, 10.0):
        np.testing.assert_array_equal(op.resolvent(lam, P), dom.project(P))


def test_negative_definite_linear_rejected():
    with pytest.raises(ValueError):
        MonotoneOperator.linear([[-1.0]])


def test_sum_resolvent_solves_inclusion():
    # A = N_[0,inf) + c x: for p >= 0 the solution is p/(1 + lam c), else 0
    op = MonotoneOperator.sum(ConvexDomain.half_line(), [[2.0]])
    assert op.resolvent(0.5, np.array([3.0])) == pytest.approx([1.5], abs=1e-11)
    assert op.resolvent(0.5, np.array([-3.0])) == pytest.approx([0.0], abs=1e-11)


def test_sum_resolvent_nonsymmetric_2d(rng):
    M = np.array([[1.0, 2.0], [-2.0, 1.0]])  # monotone: symmetric part is I
    dom = ConvexDomain.box([0.0, 0.0], [np.inf, np.inf])
    op = MonotoneOperator.sum(dom, M)
    lam = 0.3
    for p in rng.normal(size=(10, 2)):
        x = op.resolvent(lam, p)
        # y = (p - x)/lam - M x must lie in the normal cone of the orthant at x
        y = (p - x) / lam - M @ x
        assert np.all(x >= -1e-12)
        assert np.all(y <= 1e-9)
        assert abs(x @ y) <= 1e-9


def test_sum_resolvent_reports_nonconvergence():
    # a strongly skew linear part makes the projected forward step contract very slowly
    M = np.array([[0.0, 1e4], [-1e4, 0.0]])
    op = MonotoneOperator.sum(ConvexDomain.box([0.0, 0.0], [np.inf, np.inf]), M)
    with pytest.raises(ConvergenceError) as info:
        op.resolvent(1.0, np.array([1.0, 1.0]))
    assert info.value.residual > 0


@pytest.mark.parametrize("op", [
    MonotoneOperator.zero(2),
    MonotoneOperator.linear([[2.0, 1.0], [0.0, 1.0]]),
    MonotoneOperator.indicator(ConvexDomain.ball([0.0, 0.0], 1.0)),
    MonotoneOperator.sum(ConvexDomain.box([-1.0, -1.0], [1.0, 1.0]), np.eye(2)),
], ids=["zero", "linear", "indicator", "sum"])
def test_resolvent_firmly_nonexpansive_and_yosida_monotone(op, rng):
    P = rng.normal(scale=3.0, size=(40, 2))
    R = rng.normal(scale=3.0, size=(40, 2))
    lam = 0.7
    JP, JR = op.resolvent(lam, P), op.resolvent(lam, R)
    assert np.all(np.linalg.norm(JP - JR, axis=1) <= np.linalg.norm(P - R, axis=1) + 1e-10)
    samples = [GraphSample(x, y) for x, y in zip(JP, op.yosida(lam, P))]
    assert graph_monotonicity_check(op, samples, tol=1e-9).ok


# -- graph checks ---------------------------------------------------------------

def test_monotonicity_check_linear_psd(rng):
    op = MonotoneOperator.linear([[2.0, 0.5], [0.5, 1.0]])
    assert graph_monotonicity_check(op, op.graph_samples(rng, 30)).ok


def test_monotonicity_check_detects_sign_flip():
    samples = [GraphSample(np.array([x]), np.array([-x])) for x in (-1.0, 0.0, 2.0)]
    res = graph_monotonicity_check(None, samples)
    assert not res.ok and res.worst < 0


def test_monotonicity_check_normal_cone_pair():
    samples = [GraphSample(np.array([0.0]), np.array([-3.0])), GraphSample(np.array([1.0]), np.array([0.0]))]
    res = graph_monotonicity_check(None, samples)
    assert res.ok
    assert res.worst == pytest.approx(0.0)  # diagonal pairs give 0, the off-diagonal pair gives 3


def test_monotonicity_check_needs_two_samples():
    with pytest.raises(ValueError):
        graph_monotonicity_check(None, [GraphSample(np.zeros(1), np.zeros(1))])


def test_graph_samples_lie_in_graph(rng):
    dom = ConvexDomain.half_line()
    op = MonotoneOperator.indicator(dom)
    for x, y in op.graph_samples(rng, 50):
        assert x[0] >= 0
        assert y[0] <= 0 and (x[0] == 0 or y[0] == 0)


# -- variation inequality -------------------------------------------------------

def _skorokhod_drift_down(h=0.5, steps=1000):
    """x' = -1 reflected at 0: X = max(h - t, 0), dK = -dt after hitting 0."""
    grid = TimeGrid(1.0, steps)
    t = grid.times
    X = np.maximum(h - t, 0.0)[:, None]
    dK = np.where(t[1:] > h + 1e-12, -grid.dt, 0.0)[:, None]
    return SamplePath(grid, X), FiniteVariationPath(grid, dK)


def test_variation_check_zero_K():
    grid = TimeGrid(1.0, 10)
    X = SamplePath(grid, np.linspace(0, 1, 11)[:, None])
    res = variation_inequality_check(X, FiniteVariationPath.zeros(grid, 1), [])
    assert res.ok and res.worst == 0.0 and res.total_variation == 0.0


def test_variation_check_closed_form_skorokhod():
    X, K = _skorokhod_drift_down()
    graph = [GraphSample(np.array([1.0]), np.array([0.0])), GraphSample(np.array([0.0]), np.array([-2.0]))]
    res = variation_inequality_check(X, K, graph)
    assert res.ok
    assert res.total_variation == pytest.approx(0.5, abs=2e-3)


def test_variation_check_sign_flip_violates():
    X, K = _skorokhod_drift_down()
    flipped = FiniteVariationPath(K.grid, -K.increments)
    assert not variation_inequality_check(X, flipped, [GraphSample(np.array([1.0]), np.array([0.0]))]).ok


def test_variation_check_grid_mismatch():
    X, K = _skorokhod_drift_down(steps=100)
    X2, _ = _skorokhod_drift_down(steps=50)
    with pytest.raises(GridMismatchError):
        variation_inequality_check(X2, K, [])


def test_cepa_diagnostic_inequality():
    X, K = _skorokhod_drift_down()
    res = variation_inequality_check(X, K, [], interior_point=[1.0])
    c = res.cepa
    assert c.pairing == pytest.approx(0.5, abs=2e-3)  # <0 - 1, -dt> summed over [0.5, 1]
    assert c.variation == pytest.approx(0.5, abs=2e-3)
    assert c.holds(1.0, 0.0, 0.0)
    assert c == cepa_diagnostic(X, K, [1.0])
