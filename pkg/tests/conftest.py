from __future__ import annotations

import numpy as np
import pytest

from mvldp.coefficients import make_coefficients
from mvldp.dynamics import Scenario
from mvldp.monotone import ConvexDomain, MonotoneOperator
from mvldp.paths import TimeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


def brownian(dim=1, h=None, horizon=1.0, steps=100, particles=64, replicas=1, seed=0, reflected=False):
    """Scenario with b = 0 and sigma = I, optionally reflected on [0, inf)."""
    coeffs = make_coefficients("constant", "constant", dim)
    if reflected:
        op = MonotoneOperator.indicator(ConvexDomain.half_line())
    else:
        op = MonotoneOperator.zero(dim)
    h = np.zeros(dim) if h is None else h
    return Scenario(op, coeffs, h, TimeGrid(horizon, steps), particles=particles, replicas=replicas, seed=seed)


def mean_field(steps=200, particles=200, replicas=1, seed=0, h=0.5):
    """Reflected mean-field scenario b(x, mu) = -x - 0.5 (x - mean(mu)), sigma = 1."""
    coeffs = make_coefficients("mean-field-linear", "constant", 1, {"alpha": -1.0, "beta": -0.5})
    op = MonotoneOperator.indicator(ConvexDomain.half_line())
    return Scenario(op, coeffs, [h], TimeGrid(1.0, steps), particles=particles, replicas=replicas, seed=seed)
