from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvldp.measure import (
    ASSIGNMENT_CAP,
    EmpiricalMeasure,
    dirac,
    second_moment,
    w2_1d,
    w2_assignment,
    w2_coupled_bound,
)


def brute_w2(x, y):
    n = len(x)
    best = min(np.sum((x - y[list(p)]) ** 2) for p in itertools.permutations(range(n)))
    return np.sqrt(best / n)


def test_w2_1d_examples():
    assert w2_1d([[0.0], [1.0]], [[0.0], [1.0]]) == 0.0
    assert w2_1d([[0.0]], [[2.0]]) == 2.0
    assert w2_1d([[0.0], [2.0]], [[1.0], [3.0]]) == pytest.approx(1.0)


def test_w2_1d_errors():
    with pytest.raises(ValueError):
        w2_1d(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        w2_1d(np.zeros((3, 1)), np.zeros((2, 1)))


def test_w2_assignment_matches_exhaustive_and_1d(rng):
    for _ in range(50):
        n, d = rng.integers(1, 7, endpoint=True), rng.integers(1, 3, endpoint=True)
        x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        assert abs(w2_assignment(x, y) - brute_w2(x, y)) <= 1e-10
        if d == 1:
            assert abs(w2_assignment(x, y) - w2_1d(x, y)) <= 1e-10


def test_w2_assignment_identical_is_zero(rng):
    x = rng.normal(size=(20, 3))
    assert w2_assignment(x, x[rng.permutation(20)]) == pytest.approx(0.0, abs=1e-12)


def test_w2_assignment_cap_guides_to_bound():
    x = np.zeros((ASSIGNMENT_CAP + 1, 1))
    with pytest.raises(ValueError, match="w2_coupled_bound"):
        w2_assignment(x, x)


def test_w2_metric_axioms(rng):
    for _ in range(30):
        x, y, z = (rng.normal(size=(8, 2)) for _ in range(3))
        assert w2_assignment(x, y) == pytest.approx(w2_assignment(y, x), abs=1e-12)
        assert w2_assignment(x, z) <= w2_assignment(x, y) + w2_assignment(y, z) + 1e-10


def test_coupled_bound_examples(rng):
    x = rng.normal(size=(30, 2))
    assert w2_coupled_bound(x, x) == 0.0
    c = np.array([0.3, -0.4])
    assert w2_coupled_bound(x, x + c) == pytest.approx(0.5)
    assert w2_assignment(x, x + c) == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)), st.permutations(range(6)))
def test_coupled_bound_dominates_assignment(x, perm):
    y = x[list(perm)] + 0.1
    assert w2_coupled_bound(x, y) >= w2_assignment(x, y) - 1e-12


def test_second_moment_examples():
    assert second_moment(dirac([0.0])) == 0.0
    assert second_moment(EmpiricalMeasure([[-1.0], [1.0]])) == 1.0
    assert second_moment(EmpiricalMeasure([[3.0, 4.0]])) == 25.0


def test_dirac_is_single_atom_measure():
    mu = dirac([1.5, -2.0])
    assert mu.size == 1 and mu.dim == 2
    np.testing.assert_array_equal(mu.mean(), [1.5, -2.0])
    assert mu.variance() == 0.0


def test_identical_atoms_reproduce_dirac_exactly():
    p = np.array([0.1, 0.7])
    cloud = EmpiricalMeasure(np.tile(p, (37, 1)))
    np.testing.assert_array_equal(cloud.mean(), dirac(p).mean())
    assert cloud.second_moment() == dirac(p).second_moment()


def test_expect_probe(rng):
    x = rng.normal(size=(100, 2))
    mu = EmpiricalMeasure(x)
    np.testing.assert_allclose(mu.expect(lambda a: a**2), np.mean(x**2, axis=0))
    np.testing.assert_allclose(mu.mean(), x.mean(axis=0), atol=1e-14)


def test_empty_measure_rejected():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((0, 1)))
