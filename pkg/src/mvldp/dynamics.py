"""Time stepping for the limit equation, the particle system and the MDP process.

Every scheme here is a Lie splitting: an explicit drift/diffusion step to a
pre-point ``p`` followed by a backward resolvent step ``X_{i+1} = J_dt(p)``.
The reflection increment is ``dK_i = p - X_{i+1}``, i.e. ``dt`` times the
Yosida value, which lies in ``dt * A(X_{i+1})``.

The law of the solution is replaced by the empirical measure of the N
particles of one system, frozen over each step. The deterministic limit uses
the exact Dirac law of its own state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .coefficients import CoefficientSet
from .measure import EmpiricalMeasure
from .monotone import GraphSample, MonotoneOperator, VariationMonitor
from .noise import NoiseStream
from .paths import FiniteVariationPath, SamplePath, TimeGrid

INVARIANT_SLACK = 1e-8
LAMBDA_GUARD = 1e-12


class SimulationError(ArithmeticError):
    """Non-finite state encountered; carries the step index and replica."""

    def __init__(self, message: str, step: int, replica: int | None = None):
        where = f"step {step}" + ("" if replica is None else f", replica {replica}")
        super().__init__(f"{message} at {where}")
        self.step = step
        self.replica = replica


@dataclass
class Scenario:
    operator: MonotoneOperator
    coefficients: CoefficientSet
    h: NDArray[np.float64]
    grid: TimeGrid
    particles: int = 1000
    replicas: int = 1
    seed: int = 0

    def __post_init__(self):
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        d = self.operator.dim
        if self.h.shape != (d,) or self.coefficients.dim != d:
            raise ValueError(
                f"dimension mismatch: operator d={d}, coefficients d={self.coefficients.dim}, "
                f"h shape {self.h.shape}")
        if not bool(self.operator.closure_domain.contains(self.h, tol=1e-12)):
            raise ValueError(f"initial point h={self.h.tolist()} lies outside the closure of D(A)")
        if self.particles < 1 or self.replicas < 1:
            raise ValueError("particles and replicas must be >= 1")

    @property
    def dim(self) -> int:
        return self.operator.dim

    def with_(self, **changes) -> Scenario:
        fields = dict(operator=self.operator, coefficients=self.coefficients, h=self.h, grid=self.grid,
                      particles=self.particles, replicas=self.replicas, seed=self.seed)
        fields.update(changes)
        return Scenario(**fields)


def _apply(sig: NDArray, v: NDArray) -> NDArray:
    """Batch matrix-vector product ``sig[n] @ v[n]``."""
    if sig.shape[-1] == 1:
        return sig[:, :, 0] * v
    return np.einsum("nij,nj->ni", sig, v)


def _reflect(op: MonotoneOperator, dt: float, p: NDArray, step: int, replica: int | None):
    if not np.all(np.isfinite(p)):
        raise SimulationError("non-finite pre-resolvent state", step, replica)
    x = op.resolvent(dt, p)
    return x, p - x


# -- deterministic controlled equation ----------------------------------------

def controlled_ode(scenario: Scenario, U: NDArray, law: NDArray | None = None,
                   ) -> tuple[NDArray, NDArray]:
    """Integrate ``dY = b(Y, delta) dt + sigma(Y, delta) u dt - dK`` for a batch of controls.

    ``U`` has shape ``(n, M, d)``. The law argument at step i is the Dirac mass
    at ``law[i]`` (shape ``(M+1, d)``); ``law=None`` means the Dirac mass at the
    path's own state, which requires ``n == 1``. Returns ``(Y, dK)`` of shapes
    ``(n, M+1, d)`` and ``(n, M, d)``.
    """
    op, grid = scenario.operator, scenario.grid
    b, sigma = scenario.coefficients.drift, scenario.coefficients.diffusion
    n, M, d = U.shape
    if M != grid.steps or d != scenario.dim:
        raise ValueError(f"controls must have shape (n, {grid.steps}, {scenario.dim}), got {U.shape}")
    if law is None and n != 1:
        raise ValueError("self-consistent Dirac law needs a single path")
    dt = grid.dt
    Y = np.empty((n, M + 1, d))
    dK = np.empty((n, M, d))
    Y[:, 0] = scenario.h
    y = Y[:, 0].copy()
    for i in range(M):
        mu = EmpiricalMeasure.dirac(y[0] if law is None else law[i])
        drift = b(y, mu) + _apply(sigma(y, mu), U[:, i])
        y, dK[:, i] = _reflect(op, dt, y + drift * dt, i, None)
        Y[:, i + 1] = y
    return Y, dK


def solve_limit(scenario: Scenario) -> tuple[SamplePath, FiniteVariationPath]:
    """Deterministic limit X^0 with the Dirac law of its own state.

    Runs the same integrator as the skeleton with a zero control, so
    ``solve_skeleton(u = 0)`` reproduces it bit for bit.
    """
    U = np.zeros((1, scenario.grid.steps, scenario.dim))
    Y, dK = controlled_ode(scenario, U, law=None)
    return SamplePath(scenario.grid, Y[0]), FiniteVariationPath(scenario.grid, dK[0])


# -- particle systems ------------------------------------------------------------

@dataclass
class Ensemble:
    """Output of one N-particle system.

    ``states``/``increments`` are only kept when the run was recorded; the
    terminal states, reflection variation, discrete variation-inequality
    slack and (when a reference path was given) sup-distances always are.
    """

    grid: TimeGrid
    eps: float
    replica: int
    terminal: NDArray[np.float64]
    variation: NDArray[np.float64]
    vi_worst: NDArray[np.float64]
    states: NDArray[np.float64] | None = None
    increments: NDArray[np.float64] | None = None
    sup_dev: NDArray[np.float64] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.terminal.shape[0]

    @property
    def vi_ok(self) -> NDArray[np.bool_]:
        return self.vi_worst >= -INVARIANT_SLACK * (1.0 + self.variation)

    def path(self, j: int) -> tuple[SamplePath, FiniteVariationPath]:
        if self.states is None:
            raise ValueError("ensemble was not recorded; rerun with record=True")
        return SamplePath(self.grid, self.states[j]), FiniteVariationPath(self.grid, self.increments[j])


def default_graph(op: MonotoneOperator, n: int = 8, seed: int = 12345) -> list[GraphSample]:
    """A fixed probe set of graph points used by the online variation check."""
    return op.graph_samples(np.random.default_rng(seed), n)


class _Tracker:
    """Per-step bookkeeping shared by the particle loops."""

    def __init__(self, n: int, d: int, grid: TimeGrid, record: bool, graph, reference, x0):
        self.record = record
        self.monitor = VariationMonitor(graph, n, d)
        self.reference = None if reference is None else np.asarray(reference, dtype=float)
        if record:
            self.states = np.empty((n, grid.steps + 1, d))
            self.increments = np.empty((n, grid.steps, d))
            self.states[:, 0] = x0
        self.sup_dev = None
        if self.reference is not None:
            self.sup_dev = np.linalg.norm(x0 - self.reference[0], axis=1)
        self.dt = grid.dt

    def update(self, i: int, x: NDArray, dk: NDArray) -> None:
        self.monitor.update(x, dk, self.dt)
        if self.record:
            self.states[:, i + 1] = x
            self.increments[:, i] = dk
        if self.reference is not None:
            np.maximum(self.sup_dev, np.linalg.norm(x - self.reference[i + 1], axis=1), out=self.sup_dev)

    def finish(self, grid, eps, replica, x) -> Ensemble:
        return Ensemble(grid=grid, eps=eps, replica=replica, terminal=x.copy(),
                        variation=self.monitor.variation.copy(),
                        vi_worst=self.monitor.worst_per_path(),
                        states=self.states if self.record else None,
                        increments=self.increments if self.record else None,
                        sup_dev=self.sup_dev)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    return eps


def _noise_source(scenario: Scenario, replica: int, n: int, increments):
    if increments is None:
        stream = NoiseStream(scenario.seed, replica, n, scenario.dim, scenario.grid.dt)
        return lambda i: stream.next()
    inc = np.asarray(increments, dtype=float)
    if inc.shape != (n, scenario.grid.steps, scenario.dim):
        raise ValueError(f"increments must have shape {(n, scenario.grid.steps, scenario.dim)}, got {inc.shape}")
    return lambda i: inc[:, i]


def simulate_particles(scenario: Scenario, eps: float, *, replica: int = 0, record: bool = True,
                       reference=None, graph: Sequence[GraphSample] | None = None,
                       increments=None, x0=None) -> Ensemble:
    """Simulate one N-particle system for the perturbed equation.

    Per step each particle moves to
    ``p = X + b_eps(X, mu_i) dt + sqrt(eps) sigma_eps(X, mu_i) dW`` with
    ``mu_i`` the empirical measure of the current states, then ``X <- J_dt(p)``.

    Parameters
    ----------
    reference : array (M+1, d), optional
        Path against which ``sup_t |X_t - reference_t|`` is tracked per particle.
    graph : list of GraphSample, optional
        Probe set for the online variation-inequality check (default: 8 fixed
        random graph points of the operator).
    increments : array (N, M, d), optional
        Explicit Brownian increments replacing the seeded noise stream.
    x0 : array (N, d), optional
        Per-particle initial states (default: every particle at ``h``).
    """
    eps = _check_eps(eps)
    op, grid = scenario.operator, scenario.grid
    n, d = scenario.particles, scenario.dim
    b, sigma = scenario.coefficients.b(eps), scenario.coefficients.sigma(eps)
    graph = default_graph(op) if graph is None else graph
    x = np.tile(scenario.h, (n, 1)) if x0 is None else np.array(x0, dtype=float).reshape(n, d)
    noise = _noise_source(scenario, replica, n, increments)
    root = np.sqrt(eps)
    dt = grid.dt
    track = _Tracker(n, d, grid, record, graph, reference, x)
    for i in range(grid.steps):
        mu = EmpiricalMeasure(x)
        p = x + b(x, mu) * dt + root * _apply(sigma(x, mu), noise(i))
        x, dk = _reflect(op, dt, p, i, replica)
        track.update(i, x, dk)
    return track.finish(grid, eps, replica, x)


@dataclass
class CoupledEnsemble:
    """A perturbed ensemble paired with the deterministic limit on the same grid."""

    ensemble: Ensemble
    limit: SamplePath
    limit_reflection: FiniteVariationPath

    @property
    def sup_sq(self) -> NDArray[np.float64]:
        """``sup_t |X^eps_t - X^0_t|^2`` per particle."""
        return self.ensemble.sup_dev**2


def simulate_coupled_limit(scenario: Scenario, eps: float, *, replica: int = 0, record: bool = False,
                           graph=None, limit=None) -> CoupledEnsemble:
    """Simulate X^eps and X^0 on one grid; X^0 is shared by all particles."""
    X0, K0 = solve_limit(scenario) if limit is None else limit
    ens = simulate_particles(scenario, eps, replica=replica, record=record, reference=X0.values,
                             graph=graph)
    return CoupledEnsemble(ens, X0, K0)


def check_speed(eps: float, lam: float) -> None:
    if not lam >= LAMBDA_GUARD:
        raise ValueError(f"lambda(eps)={lam} is below the guard {LAMBDA_GUARD}")
    if lam > 1.0:
        raise ValueError(f"lambda(eps)={lam} must lie in (0, 1]")
    if eps / lam**2 > 1.0:
        raise ValueError(f"speed eps/lambda^2 = {eps / lam**2:.3g} exceeds 1")


@dataclass
class MDPEnsemble:
    """Centered, rescaled fluctuations ``M = (X^eps - X^0) / lambda``."""

    grid: TimeGrid
    eps: float
    lam: float
    terminal: NDArray[np.float64]
    sup_norm: NDArray[np.float64]
    states: NDArray[np.float64] | None = None
    increments: NDArray[np.float64] | None = None
    source: Ensemble | None = None

    @property
    def size(self) -> int:
        return self.terminal.shape[0]


def _to_mdp(coupled_states, coupled_inc, terminal, sup_dev, X0, K0, grid, eps, lam, source) -> MDPEnsemble:
    states = inc = None
    if coupled_states is not None:
        states = (coupled_states - X0.values[None]) / lam
        inc = (coupled_inc - K0.increments[None]) / lam
    return MDPEnsemble(grid=grid, eps=eps, lam=lam, terminal=(terminal - X0.terminal) / lam,
                       sup_norm=sup_dev / lam, states=states, increments=inc, source=source)


def mdp_process(scenario: Scenario, eps: float, lam: float, *, replica: int = 0,
                record: bool = True, graph=None) -> MDPEnsemble:
    """``M^eps_t = (X^eps_t - X^0_t) / lambda(eps)`` from a coupled run."""
    check_speed(eps, lam)
    c = simulate_coupled_limit(scenario, eps, replica=replica, record=record, graph=graph)
    e = c.ensemble
    return _to_mdp(e.states, e.increments, e.terminal, e.sup_dev, c.limit, c.limit_reflection,
                   scenario.grid, eps, lam, e)


def trajectory_rows(ens: Ensemble, particles: Sequence[int] | None = None):
    """Rows ``(replica, particle, step, t, x..., k...)`` of a recorded ensemble."""
    if ens.states is None:
        raise ValueError("ensemble was not recorded")
    times = ens.grid.times
    idx = range(ens.size) if particles is None else particles
    for j in idx:
        K = np.zeros((ens.grid.steps + 1, ens.states.shape[2]))
        np.cumsum(ens.increments[j], axis=0, out=K[1:])
        for i, t in enumerate(times):
            yield (ens.replica, j, i, t, *ens.states[j, i], *K[i])
