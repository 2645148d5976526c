"""Controlled equations: the skeleton Y^u, the controlled perturbed process,
the linearised (MDP) skeleton nu^psi and the controlled MDP process.

Controls are piecewise constant on the solver grid. The law argument of the
skeletons is the Dirac mass on the limit path X^0; the stochastic controlled
processes read the empirical law of an uncontrolled reference system that is
driven by the same Brownian increments, so that the law does not depend on
the control.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .coefficients import JacobianField
from .dynamics import (
    Ensemble,
    MDPEnsemble,
    Scenario,
    _apply,
    _check_eps,
    _noise_source,
    _reflect,
    _to_mdp,
    _Tracker,
    check_speed,
    controlled_ode,
    default_graph,
    solve_limit,
)
from .measure import EmpiricalMeasure
from .monotone import ConvexDomain, MonotoneOperator
from .paths import ControlPath, FiniteVariationPath, SamplePath

BOUNDARY_TOL = 1e-10


def _control_table(u, n: int, scenario: Scenario) -> NDArray:
    """Control values as ``(n, M, d)`` or ``(M, d)`` (shared by all rows)."""
    vals = u.values if isinstance(u, ControlPath) else np.asarray(u, dtype=float)
    M, d = scenario.grid.steps, scenario.dim
    if vals.shape == (M, d) or vals.shape == (n, M, d):
        if not np.all(np.isfinite(vals)):
            raise ValueError("control has infinite energy")
        return vals
    raise ValueError(f"control must have shape ({M}, {d}) or ({n}, {M}, {d}), got {vals.shape}")


def solve_skeleton(scenario: Scenario, u: ControlPath, limit=None) -> tuple[SamplePath, FiniteVariationPath]:
    """``dY = b(Y, delta_{X^0}) dt + sigma(Y, delta_{X^0}) u dt - dK``, ``Y_0 = h``."""
    X0 = (limit or solve_limit(scenario))[0]
    U = _control_table(u, 1, scenario)
    Y, dK = controlled_ode(scenario, U[None] if U.ndim == 2 else U, law=X0.values)
    return SamplePath(scenario.grid, Y[0]), FiniteVariationPath(scenario.grid, dK[0])


def solve_controlled_perturbed(scenario: Scenario, eps: float, u, *, replica: int = 0,
                               record: bool = True, reference=None, graph=None,
                               increments=None) -> Ensemble:
    """Controlled particle system Z with ``sigma_eps(Z, mu) u dt`` added per step.

    ``mu`` is the empirical law of the uncontrolled system run alongside with
    the same increments. ``u`` is a shared :class:`ControlPath` or a table of
    shape ``(N, M, d)`` (one deterministic control per particle).
    """
    eps = _check_eps(eps)
    op, grid = scenario.operator, scenario.grid
    n, d = scenario.particles, scenario.dim
    U = _control_table(u, n, scenario)
    b, sigma = scenario.coefficients.b(eps), scenario.coefficients.sigma(eps)
    graph = default_graph(op) if graph is None else graph
    noise = _noise_source(scenario, replica, n, increments)
    root, dt = np.sqrt(eps), grid.dt
    x = np.tile(scenario.h, (n, 1))
    z = x.copy()
    track = _Tracker(n, d, grid, record, graph, reference, z)
    for i in range(grid.steps):
        mu = EmpiricalMeasure(x)
        dw = noise(i)
        x, _ = _reflect(op, dt, x + b(x, mu) * dt + root * _apply(sigma(x, mu), dw), i, replica)
        sz = sigma(z, mu)
        ui = U[i] if U.ndim == 2 else U[:, i]
        ctrl = _apply(sz, np.broadcast_to(ui, z.shape))
        z, dk = _reflect(op, dt, z + b(z, mu) * dt + root * _apply(sz, dw) + ctrl * dt, i, replica)
        track.update(i, z, dk)
    return track.finish(grid, eps, replica, z)


# -- linearised skeleton ----------------------------------------------------------

def tangent_cone(domain: ConvexDomain, x, tol: float = BOUNDARY_TOL) -> ConvexDomain:
    """Tangent cone of a convex domain at x (whole space at interior points)."""
    x = np.asarray(x, dtype=float)
    d = domain.dim
    if domain.kind == "whole-space" or domain.margin(x) > tol:
        return ConvexDomain.whole_space(d)
    if domain.kind in ("half-space", "polyhedron"):
        active = domain.offsets - domain.normals @ x <= tol
        return ConvexDomain.polyhedron(domain.normals[active], np.zeros(int(active.sum())))
    if domain.kind == "box":
        lo = np.where(x - domain.lower <= tol, 0.0, -np.inf)
        hi = np.where(domain.upper - x <= tol, 0.0, np.inf)
        return ConvexDomain.box(lo, hi)
    normal = (x - domain.center) / np.linalg.norm(x - domain.center)
    return ConvexDomain.half_space(normal, 0.0)


def linearized_operator(op: MonotoneOperator, x, tol: float = BOUNDARY_TOL) -> MonotoneOperator:
    """The operator acting on fluctuations around the point x.

    The constraint part becomes the normal cone of the tangent cone at x; a
    linear part is kept unchanged (it is its own derivative).
    """
    if op.kind == "zero":
        return op
    if op.kind == "linear":
        return op
    cone = tangent_cone(op.domain, x, tol)
    if op.kind == "indicator":
        return MonotoneOperator.zero(op.dim) if cone.kind == "whole-space" else MonotoneOperator.indicator(cone)
    if cone.kind == "whole-space":
        return MonotoneOperator.linear(op.matrix)
    return MonotoneOperator.sum(cone, op.matrix)


def _activity_key(op: MonotoneOperator, x, tol: float = BOUNDARY_TOL):
    dom = op.domain
    if dom is None or dom.kind == "whole-space" or dom.margin(x) > tol:
        return None
    if dom.kind in ("half-space", "polyhedron"):
        return tuple(dom.offsets - dom.normals @ x <= tol)
    if dom.kind == "box":
        return tuple(x - dom.lower <= tol) + tuple(dom.upper - x <= tol)
    return tuple(np.asarray(x, dtype=float).tolist())


def mdp_skeleton_batch(scenario: Scenario, Psi: NDArray, X0: SamplePath, jac: JacobianField,
                       ) -> tuple[NDArray, NDArray]:
    """Integrate ``dnu = b'(X^0) nu dt + sigma(X^0) psi dt - dK`` for a batch of controls.

    Returns ``(nu, dK)`` with shapes ``(n, M+1, d)`` and ``(n, M, d)``.
    """
    grid = scenario.grid
    n, M, d = Psi.shape
    dt = grid.dt
    sigma = scenario.coefficients.diffusion
    nu = np.zeros((n, M + 1, d))
    dK = np.empty((n, M, d))
    v = np.zeros((n, d))
    ops: dict = {}
    for i in range(M):
        xi = X0.values[i][None, :]
        mu = EmpiricalMeasure.dirac(X0.values[i])
        J = jac(xi, mu)[0]
        S = sigma(xi, mu)[0]
        key = _activity_key(scenario.operator, X0.values[i])
        if key not in ops:
            ops[key] = linearized_operator(scenario.operator, X0.values[i])
        op_i = ops[key]
        p = v + (v @ J.T + Psi[:, i] @ S.T) * dt
        v, dK[:, i] = _reflect(op_i, dt, p, i, None)
        nu[:, i + 1] = v
    return nu, dK


def solve_mdp_skeleton(scenario: Scenario, psi: ControlPath, jac: JacobianField | None = None,
                       limit=None) -> tuple[SamplePath, FiniteVariationPath]:
    """Linearised skeleton nu^psi with ``nu(0) = 0``.

    ``jac`` defaults to the analytic drift Jacobian of the coefficient set when
    it has one, else central differences.
    """
    X0 = (limit or solve_limit(scenario))[0]
    jac = jac or JacobianField.for_coefficients(scenario.coefficients)
    P = _control_table(psi, 1, scenario)
    nu, dK = mdp_skeleton_batch(scenario, P[None] if P.ndim == 2 else P, X0, jac)
    return SamplePath(scenario.grid, nu[0]), FiniteVariationPath(scenario.grid, dK[0])


def solve_mdp_controlled(scenario: Scenario, eps: float, lam: float, psi, *, replica: int = 0,
                         record: bool = True, graph=None, increments=None) -> MDPEnsemble:
    """Controlled fluctuation process ``M^psi = (Z - X^0) / lambda``.

    Z is the full reflected state driven by ``sqrt(eps) W + lambda int psi``
    with the law of the uncontrolled system; the fluctuation reflection is
    ``(dK^Z - dK^0) / lambda``.
    """
    check_speed(eps, lam)
    X0, K0 = solve_limit(scenario)
    P = _control_table(psi, scenario.particles, scenario)
    ens = solve_controlled_perturbed(scenario, eps, lam * P, replica=replica, record=record,
                                     reference=X0.values, graph=graph, increments=increments)
    return _to_mdp(ens.states, ens.increments, ens.terminal, ens.sup_dev, X0, K0, scenario.grid,
                   eps, lam, ens)


# -- weak continuity --------------------------------------------------------------

def _oscillation(grid, n: int) -> NDArray:
    """Cell averages of ``sin(2 pi n t / T)`` on the grid cells."""
    a = 2 * np.pi * n / grid.horizon
    t = grid.times
    return (np.cos(a * t[:-1]) - np.cos(a * t[1:])) / (a * grid.dt)


def weak_convergence_probe(scenario: Scenario, u: ControlPath, n: int, mode: str = "oscillatory",
                           direction=None, limit=None) -> float:
    """``sup_t |Y^{u_n} - Y^u|`` for a perturbed control family.

    ``oscillatory``: ``u_n = u + sin(2 pi n t / T) e`` (weakly, not strongly,
    convergent). ``lowpass``: ``u_n = u + sin(2 pi t / T) e / n`` (strongly
    convergent). ``n = 0`` leaves u unchanged.
    """
    if mode not in ("oscillatory", "lowpass"):
        raise ValueError(f"unknown probe mode {mode!r}")
    if n == 0:
        return 0.0
    d = scenario.dim
    e = np.zeros(d)
    e[0] = 1.0
    if direction is not None:
        e = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    limit = limit or solve_limit(scenario)
    wave = _oscillation(scenario.grid, n) if mode == "oscillatory" else _oscillation(scenario.grid, 1) / n
    un = ControlPath(scenario.grid, u.values + wave[:, None] * e)
    Y, _ = solve_skeleton(scenario, u, limit)
    Yn, _ = solve_skeleton(scenario, un, limit)
    return Y.sup_distance(Yn)
