"""Rate functions: closed-form inversion on interior paths, penalty optimisation otherwise.

The large-deviation cost of a path g is half the minimal L^2 energy of a
control whose skeleton equals g; the moderate-deviation cost uses the
linearised skeleton. Values from :func:`rate_optimize` are upper bounds
(energy of an explicitly constructed admissible control), never certified
infima.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .coefficients import JacobianField
from .dynamics import Scenario, controlled_ode, solve_limit
from .measure import EmpiricalMeasure
from .paths import ControlPath, SamplePath, TimeGrid
from .skeleton import linearized_operator, mdp_skeleton_batch, solve_mdp_skeleton, solve_skeleton

CONDITION_LIMIT = 1e8
PENALTY_TOL = 1e-4


class BoundaryContactError(ValueError):
    """The path touches the boundary; use :func:`rate_optimize` instead."""


# -- targets -------------------------------------------------------------------

@dataclass(frozen=True)
class TerminalHalfSpace:
    """``{x : <c, x_T> >= r}``."""

    normal: NDArray[np.float64]
    level: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.atleast_1d(np.asarray(self.normal, dtype=float)))
        if not np.any(self.normal):
            raise ValueError("terminal half-space needs a nonzero normal")

    reference = None

    def violation(self, Y: NDArray) -> NDArray:
        c = self.normal
        return np.maximum(self.level - Y[:, -1] @ c, 0.0) / np.linalg.norm(c)

    def hit(self, terminal: NDArray, sup_dev: NDArray | None = None) -> NDArray[np.bool_]:
        return terminal @ self.normal >= self.level


@dataclass(frozen=True)
class TerminalBall:
    """``{x : |x_T - center| <= radius}``."""

    center: NDArray[np.float64]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius > 0:
            raise ValueError("terminal ball radius must be positive")

    reference = None

    def violation(self, Y: NDArray) -> NDArray:
        return np.maximum(np.linalg.norm(Y[:, -1] - self.center, axis=1) - self.radius, 0.0)

    def hit(self, terminal: NDArray, sup_dev: NDArray | None = None) -> NDArray[np.bool_]:
        return np.linalg.norm(terminal - self.center, axis=1) <= self.radius


@dataclass(frozen=True)
class Tube:
    """``{x : sup_t |x_t - center_t| <= radius}`` around a grid path."""

    center: NDArray[np.float64]
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c[:, None] if c.ndim == 1 else c)
        if not self.radius > 0:
            raise ValueError("tube radius must be positive")

    @property
    def reference(self) -> NDArray:
        return self.center

    def violation(self, Y: NDArray) -> NDArray:
        dev = np.max(np.linalg.norm(Y - self.center[None], axis=2), axis=1)
        return np.maximum(dev - self.radius, 0.0)

    def hit(self, terminal: NDArray, sup_dev: NDArray | None = None) -> NDArray[np.bool_]:
        if sup_dev is None:
            raise ValueError("tube events need the tracked sup-distance to the tube center")
        return sup_dev <= self.radius


Target = TerminalHalfSpace | TerminalBall | Tube


@dataclass(frozen=True)
class RateQuery:
    target: object
    regime: str = "LDP"

    def __post_init__(self):
        if self.regime not in ("LDP", "MDP"):
            raise ValueError(f"regime must be LDP or MDP, got {self.regime!r}")


@dataclass
class RateResult:
    value: float
    control: ControlPath
    path: SamplePath
    residual: float
    method: str
    converged: bool = True
    iterations: int = 0
    penalty: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        """Only closed-form inversions are exact; optimised values are upper bounds."""
        return self.method == "inversion"

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "upper_bound": not self.certified,
            "converged": self.converged,
            "residual": self.residual,
            "iterations": self.iterations,
            "penalty": self.penalty,
            "control_energy": control_energy(self.control),
            "control_steps": self.control.grid.steps,
            "control_dim": self.control.dim,
        }


def control_energy(u: ControlPath) -> float:
    """``0.5 * sum_i dt |u_i|^2``."""
    return u.energy


# -- closed-form inversion ---------------------------------------------------------

def _derivative(g: SamplePath) -> NDArray:
    """Central differences in the interior, one-sided at the ends."""
    return np.gradient(g.values, g.grid.dt, axis=0, edge_order=1)


def _solve_sigma(S: NDArray, rhs: NDArray, where: str) -> NDArray:
    cond = np.linalg.cond(S)
    if not np.all(np.isfinite(cond)) or np.any(cond > CONDITION_LIMIT):
        raise np.linalg.LinAlgError(f"diffusion matrix is singular or ill-conditioned along {where} "
                                    f"(condition number {np.max(cond):.3g})")
    return np.linalg.solve(S, rhs[..., None])[..., 0]


def rate_of_path(scenario: Scenario, g: SamplePath, margin: float = 1e-6, limit=None) -> RateResult:
    """LDP cost of an interior path by inverting the skeleton:
    ``u = sigma^{-1}(g' - b(g, delta_{X^0}))``.
    """
    if g.grid != scenario.grid:
        raise ValueError("path must live on the scenario grid")
    if not np.allclose(g.values[0], scenario.h, atol=1e-9):
        raise ValueError(f"path must start at h={scenario.h.tolist()}")
    dom = scenario.operator.closure_domain
    if dom.kind != "whole-space":
        m = float(np.min(dom.margin(g.values)))
        if m < margin:
            raise BoundaryContactError(
                f"path comes within {m:.3g} of the boundary (threshold {margin:g}); use rate_optimize")
    limit = limit or solve_limit(scenario)
    X0 = limit[0].values
    b, sigma = scenario.coefficients.drift, scenario.coefficients.diffusion
    gdot = _derivative(g)
    M = scenario.grid.steps
    u = np.empty((M, scenario.dim))
    matrix = scenario.operator.matrix
    for i in range(M):
        mu = EmpiricalMeasure.dirac(X0[i])
        gi = g.values[i][None]
        rhs = gdot[i] - b(gi, mu)[0]
        if matrix is not None:
            rhs = rhs + matrix @ g.values[i]
        u[i] = _solve_sigma(sigma(gi, mu)[0], rhs, "the path")
    ctrl = ControlPath(scenario.grid, u)
    Y, _ = solve_skeleton(scenario, ctrl, limit)
    return RateResult(value=control_energy(ctrl), control=ctrl, path=Y,
                      residual=float(np.max(np.linalg.norm(Y.values - g.values, axis=1))),
                      method="inversion")


def mdp_rate_of_path(scenario: Scenario, g: SamplePath, jac: JacobianField | None = None,
                     limit=None) -> RateResult:
    """MDP cost of a fluctuation path g with ``g(0) = 0``:
    ``psi = sigma(X^0)^{-1}(g' - b'(X^0) g)``.
    """
    if g.grid != scenario.grid:
        raise ValueError("path must live on the scenario grid")
    if not np.allclose(g.values[0], 0.0, atol=1e-9):
        raise ValueError("fluctuation path must start at 0")
    limit = limit or solve_limit(scenario)
    X0 = limit[0].values
    jac = jac or JacobianField.for_coefficients(scenario.coefficients)
    sigma = scenario.coefficients.diffusion
    gdot = _derivative(g)
    M, d = scenario.grid.steps, scenario.dim
    psi = np.empty((M, d))
    for i in range(M):
        lin = linearized_operator(scenario.operator, X0[i])
        if lin.domain is not None and lin.domain.kind != "whole-space" and i > 0:
            if float(lin.domain.margin(g.values[i])) <= 0:
                raise BoundaryContactError(f"fluctuation path touches the tangent cone boundary at step {i}")
        xi = X0[i][None]
        mu = EmpiricalMeasure.dirac(X0[i])
        rhs = gdot[i] - jac(xi, mu)[0] @ g.values[i]
        if lin.matrix is not None:
            rhs = rhs + lin.matrix @ g.values[i]
        psi[i] = _solve_sigma(sigma(xi, mu)[0], rhs, "the limit path")
    ctrl = ControlPath(scenario.grid, psi)
    nu, _ = solve_mdp_skeleton(scenario, ctrl, jac, limit)
    return RateResult(value=control_energy(ctrl), control=ctrl, path=nu,
                      residual=float(np.max(np.linalg.norm(nu.values - g.values, axis=1))),
                      method="inversion")


# -- penalty optimisation ----------------------------------------------------------

class _SegmentBasis:
    """Piecewise-constant controls with K segments expanded onto an M-step grid."""

    def __init__(self, grid: TimeGrid, dim: int, segments: int):
        self.grid, self.dim = grid, dim
        K = max(1, min(int(segments), grid.steps))
        self.index = np.minimum((np.arange(grid.steps) * K) // grid.steps, K - 1)
        self.K = K
        self.weights = np.bincount(self.index, minlength=K) * grid.dt

    def expand(self, theta: NDArray) -> NDArray:
        """``theta`` of shape (..., K*d) -> controls (..., M, d)."""
        th = theta.reshape(theta.shape[:-1] + (self.K, self.dim))
        return th[..., self.index, :]

    def energy(self, theta: NDArray) -> float:
        th = theta.reshape(self.K, self.dim)
        return float(0.5 * np.sum(self.weights[:, None] * th**2))

    def energy_grad(self, theta: NDArray) -> NDArray:
        th = theta.reshape(self.K, self.dim)
        return (self.weights[:, None] * th).ravel()


def _fd_gradient(fn: Callable[[NDArray], NDArray], theta: NDArray, step: float = 1e-6) -> tuple[float, NDArray]:
    """Value and central-difference gradient of a batched scalar function."""
    n = theta.size
    h = step * (1.0 + np.abs(theta))
    batch = np.empty((2 * n + 1, n))
    batch[0] = theta
    batch[1:n + 1] = theta + np.diag(h)
    batch[n + 1:] = theta - np.diag(h)
    vals = fn(batch)
    return float(vals[0]), (vals[1:n + 1] - vals[n + 1:]) / (2 * h)


def _skeleton_solver(scenario: Scenario, regime: str, jac: JacobianField | None, limit):
    X0 = limit[0]
    if regime == "LDP":
        return lambda U: controlled_ode(scenario, U, law=X0.values)[0]
    jac = jac or JacobianField.for_coefficients(scenario.coefficients)
    return lambda U: mdp_skeleton_batch(scenario, U, X0, jac)[0]


def _minimize_penalized(basis: _SegmentBasis, solve, cost: Callable[[NDArray], NDArray],
                        theta0: NDArray, penalty: float, maxiter: int):
    def batched(thetas):
        return cost(solve(basis.expand(thetas)))

    def objective(theta):
        val, grad = _fd_gradient(batched, theta)
        return (basis.energy(theta) + penalty * val, basis.energy_grad(theta) + penalty * grad)

    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10})
    return res.x, int(res.nit)


def _result_from_theta(scenario, basis, solve, theta, target, method, converged, iterations, penalty,
                       ) -> RateResult:
    U = basis.expand(theta[None])[0]
    ctrl = ControlPath(scenario.grid, U)
    Y = solve(U[None])[0]
    residual = float(target.violation(Y[None])[0])
    return RateResult(value=control_energy(ctrl), control=ctrl, path=SamplePath(scenario.grid, Y),
                      residual=residual, method=method, converged=converged, iterations=iterations,
                      penalty=penalty)


def rate_optimize(scenario: Scenario, query: RateQuery, *, segments: int = 50, restarts: int = 2,
                  seed: int = 0, tol: float = PENALTY_TOL, max_rounds: int = 10,
                  jac: JacobianField | None = None, maxiter: int = 500, limit=None) -> RateResult:
    """Upper bound on the infimum of the rate over a target set.

    Minimises ``energy(u) + rho * violation(Y^u)^2`` over piecewise-constant
    controls (``segments`` pieces) with L-BFGS and central-difference
    gradients of the violation, multiplying rho by 10 per round until the
    violation drops below ``tol``. Restarts from zero plus ``restarts``
    seeded random controls; the best admissible result is returned.
    """
    limit = limit or solve_limit(scenario)
    solve = _skeleton_solver(scenario, query.regime, jac, limit)
    basis = _SegmentBasis(scenario.grid, scenario.dim, segments)
    target = query.target

    def cost(Y):
        return target.violation(Y) ** 2

    rng = np.random.default_rng(seed)
    starts = [np.zeros(basis.K * basis.dim)]
    starts += [rng.standard_normal(basis.K * basis.dim) for _ in range(restarts)]
    best = None
    method = f"penalty-{query.regime.lower()}"
    for theta in starts:
        penalty, total_it = 1.0, 0
        converged = False
        for _ in range(max_rounds):
            if float(target.violation(solve(basis.expand(theta[None])))[0]) <= tol:
                converged = True
                break
            theta, it = _minimize_penalized(basis, solve, cost, theta, penalty, maxiter)
            total_it += it
            penalty *= 10.0
        else:
            converged = float(target.violation(solve(basis.expand(theta[None])))[0]) <= tol
        res = _result_from_theta(scenario, basis, solve, theta, target, method, converged, total_it,
                                 penalty)
        if best is None or _better(res, best):
            best = res
    return best


def _better(a: RateResult, b: RateResult) -> bool:
    if a.converged != b.converged:
        return a.converged
    if a.converged:
        return a.value < b.value
    return a.residual < b.residual


def laplace_optimize(scenario: Scenario, functional: Callable[[NDArray], NDArray], *, segments: int = 50,
                     starts: NDArray | None = None, maxiter: int = 500, limit=None) -> tuple[float, RateResult]:
    """``min_u { f(Y^u) + energy(u) }`` over piecewise-constant controls.

    ``functional`` maps a batch of paths ``(n, M+1, d)`` to ``(n,)``. Each row of
    ``starts`` is a constant control level used as an initial guess (default:
    a small grid of levels along the first coordinate).
    """
    limit = limit or solve_limit(scenario)
    solve = _skeleton_solver(scenario, "LDP", None, limit)
    basis = _SegmentBasis(scenario.grid, scenario.dim, segments)
    d = scenario.dim
    if starts is None:
        levels = np.linspace(-2.0, 2.0, 9)
        starts = np.zeros((levels.size, d))
        starts[:, 0] = levels
    best_val, best_theta, best_it = np.inf, None, 0
    for level in np.atleast_2d(starts):
        theta = np.tile(level, basis.K)
        theta, it = _minimize_penalized(basis, solve, functional, theta, 1.0, maxiter)
        U = basis.expand(theta[None])
        val = basis.energy(theta) + float(functional(solve(U))[0])
        if val < best_val:
            best_val, best_theta, best_it = val, theta, it
    res = _result_from_theta(scenario, basis, solve, best_theta, _NoTarget(), "laplace", True, best_it, 0.0)
    return best_val, res


class _NoTarget:
    def violation(self, Y):
        return np.zeros(Y.shape[0])
