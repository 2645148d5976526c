"""Maximal monotone operators on R^d and their resolvents.

Four operator variants are supported:

* ``zero``       A = 0
* ``indicator``  A = subdifferential of the indicator of a closed convex domain
                 (the normal cone; its resolvent is the Euclidean projection)
* ``linear``     A(x) = {M x} with M positive semidefinite
* ``sum``        indicator + linear, a genuinely multivalued non-projection case

Everything here is a pure function of its inputs. Points may be passed as a
single vector of shape ``(d,)`` or as a batch of shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linprog

from .paths import FiniteVariationPath, GridMismatchError, SamplePath

DOMAIN_KINDS = ("whole-space", "half-space", "box", "ball", "polyhedron")
INTERIOR_MARGIN = 1e-9
RESOLVENT_TOL = 1e-12
DYKSTRA_MAX_SWEEPS = 10_000
COMPOSITE_MAX_ITER = 100_000


class DomainEmptyError(ValueError):
    """The constraint set has empty interior (or is empty)."""


class ConvergenceError(ArithmeticError):
    """An iterative resolvent did not reach tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _unit(v) -> tuple[NDArray[np.float64], float]:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("normal vector must be nonzero")
    return v / n, n


@dataclass(frozen=True, eq=False)
class ConvexDomain:
    """Closed convex set with nonempty interior.

    Half-spaces and polyhedra use the outward-normal convention
    ``{x : <a, x> <= b}``, so the half-line ``[0, inf)`` is
    ``ConvexDomain.half_space([-1.0], 0.0)``.
    """

    kind: str
    dim: int
    normals: NDArray[np.float64] = field(default=None, repr=False)  # (k, d), unit rows
    offsets: NDArray[np.float64] = field(default=None, repr=False)  # (k,)
    lower: NDArray[np.float64] = field(default=None, repr=False)
    upper: NDArray[np.float64] = field(default=None, repr=False)
    center: NDArray[np.float64] = field(default=None, repr=False)
    radius: float = 0.0
    interior_point: NDArray[np.float64] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}; expected one of {DOMAIN_KINDS}")
        if self.interior_point is None:
            object.__setattr__(self, "interior_point", self._find_interior_point())
        a = np.asarray(self.interior_point, dtype=float).reshape(self.dim)
        object.__setattr__(self, "interior_point", a)
        margin = float(self.margin(a))
        if not margin >= INTERIOR_MARGIN:
            raise DomainEmptyError(
                f"{self.kind} domain: interior witness {a.tolist()} has margin {margin:.3e} "
                f"< {INTERIOR_MARGIN:g}")

    # -- constructors ------------------------------------------------------
    @classmethod
    def whole_space(cls, dim: int) -> ConvexDomain:
        return cls("whole-space", dim)

    @classmethod
    def half_space(cls, normal, offset: float, interior_point=None) -> ConvexDomain:
        a, n = _unit(np.atleast_1d(normal))
        return cls("half-space", a.size, normals=a[None, :], offsets=np.array([offset / n]),
                   interior_point=interior_point)

    @classmethod
    def half_line(cls) -> ConvexDomain:
        """``[0, inf)`` in one dimension."""
        return cls.half_space([-1.0], 0.0)

    @classmethod
    def box(cls, lower, upper, interior_point=None) -> ConvexDomain:
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have equal shapes")
        return cls("box", lo.size, lower=lo, upper=hi, interior_point=interior_point)

    @classmethod
    def ball(cls, center, radius: float, interior_point=None) -> ConvexDomain:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise DomainEmptyError(f"ball radius must be positive, got {radius}")
        return cls("ball", c.size, center=c, radius=float(radius), interior_point=interior_point)

    @classmethod
    def polyhedron(cls, normals, offsets, interior_point=None) -> ConvexDomain:
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float))
        if A.shape[0] != b.size:
            raise ValueError("polyhedron needs one offset per normal")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValueError("polyhedron inequality normals must be nonzero")
        return cls("polyhedron", A.shape[1], normals=A / norms[:, None], offsets=b / norms,
                   interior_point=interior_point)

    # -- geometry -------------------------------------------------------------
    def _find_interior_point(self) -> NDArray[np.float64]:
        d = self.dim
        if self.kind == "whole-space":
            return np.zeros(d)
        if self.kind == "ball":
            return self.center.copy()
        if self.kind == "box":
            lo, hi = self.lower, self.upper
            if np.any(hi - lo <= 0):
                raise DomainEmptyError("box with empty interior")
            mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
            mid = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + 1.0, mid)
            mid = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - 1.0, mid)
            return mid
        if self.kind == "half-space":
            return self.normals[0] * (self.offsets[0] - 1.0)
        # polyhedron: Chebyshev center, radius capped at 1
        A, b = self.normals, self.offsets
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
        res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * d + [(None, 1.0)],
                      method="highs")
        if res.status != 0 or res.x[-1] < INTERIOR_MARGIN:
            raise DomainEmptyError(f"{self.kind} constraints have empty interior")
        return res.x[:d]

    def margin(self, x) -> NDArray[np.float64] | float:
        """Signed slack: positive inside, zero on the boundary, negative outside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "whole-space":
            return np.full(x.shape[:-1], np.inf) if x.ndim > 1 else np.inf
        if self.kind in ("half-space", "polyhedron"):
            return np.min(self.offsets - x @ self.normals.T, axis=-1)
        if self.kind == "box":
            return np.min(np.minimum(x - self.lower, self.upper - x), axis=-1)
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    def contains(self, x, tol: float = 1e-12):
        return self.margin(x) >= -tol

    def project(self, p) -> NDArray[np.float64]:
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        P = np.atleast_2d(p)
        if P.shape[-1] != self.dim:
            raise ValueError(f"point dimension {P.shape[-1]} != domain dimension {self.dim}")
        if self.kind == "whole-space":
            out = P.copy()
        elif self.kind == "half-space":
            a, b = self.normals[0], self.offsets[0]
            excess = np.maximum(P @ a - b, 0.0)
            out = P - excess[:, None] * a
        elif self.kind == "box":
            out = np.clip(P, self.lower, self.upper)
        elif self.kind == "ball":
            diff = P - self.center
            r = np.linalg.norm(diff, axis=1)
            scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
            out = np.where((r > self.radius)[:, None], self.center + diff * scale[:, None], P)
        else:
            out = _dykstra(self.normals, self.offsets, P)
        return out[0] if single else out


def _dykstra(A: NDArray, b: NDArray, P: NDArray) -> NDArray:
    """Dykstra's alternating projections onto ``{x : A x <= b}``, vectorised over rows."""
    out = P.copy()
    active = np.any(P @ A.T - b > 0, axis=1)
    if not np.any(active):
        return out
    x = P[active].copy()
    corr = np.zeros((A.shape[0],) + x.shape)
    change = np.inf
    for _ in range(DYKSTRA_MAX_SWEEPS):
        x_prev = x.copy()
        for k in range(A.shape[0]):
            z = x + corr[k]
            excess = np.maximum(z @ A[k] - b[k], 0.0)
            x = z - excess[:, None] * A[k]
            corr[k] = z - x
        change = float(np.max(np.abs(x - x_prev)))
        infeas = float(np.max(x @ A.T - b))
        if change <= RESOLVENT_TOL and infeas <= RESOLVENT_TOL:
            break
    else:
        raise ConvergenceError("Dykstra projection did not converge", change)
    # clean up sub-tolerance infeasibility so confinement holds exactly
    viol = x @ A.T - b
    if np.any(viol > 0):
        for k in range(A.shape[0]):
            excess = np.maximum(x @ A[k] - b[k], 0.0)
            x = x - excess[:, None] * A[k]
    out[active] = x
    return out


OPERATOR_KINDS = ("zero", "indicator", "linear", "sum")


@dataclass(frozen=True, eq=False)
class MonotoneOperator:
    """One of the supported maximal monotone operators on R^d."""

    kind: str
    dim: int
    domain: ConvexDomain | None = None
    matrix: NDArray[np.float64] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}; expected one of {OPERATOR_KINDS}")
        if self.kind in ("indicator", "sum"):
            if self.domain is None or self.domain.dim != self.dim:
                raise ValueError(f"{self.kind} operator needs a {self.dim}-dimensional domain")
        if self.kind in ("linear", "sum"):
            M = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if M.shape != (self.dim, self.dim):
                raise ValueError(f"matrix must be {self.dim}x{self.dim}, got {M.shape}")
            sym = 0.5 * (M + M.T)
            lo = float(np.min(np.linalg.eigvalsh(sym)))
            if lo < -1e-12:
                raise ValueError(f"linear part is not monotone: smallest symmetric eigenvalue {lo:.3e}")
            object.__setattr__(self, "matrix", M)

    @classmethod
    def zero(cls, dim: int) -> MonotoneOperator:
        return cls("zero", dim)

    @classmethod
    def indicator(cls, domain: ConvexDomain) -> MonotoneOperator:
        return cls("indicator", domain.dim, domain=domain)

    @classmethod
    def linear(cls, matrix) -> MonotoneOperator:
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls("linear", M.shape[0], matrix=M)

    @classmethod
    def sum(cls, domain: ConvexDomain, matrix) -> MonotoneOperator:
        return cls("sum", domain.dim, domain=domain, matrix=matrix)

    @property
    def closure_domain(self) -> ConvexDomain:
        """Closure of D(A)."""
        if self.domain is not None:
            return self.domain
        return ConvexDomain.whole_space(self.dim)

    def resolvent(self, lam: float, p) -> NDArray[np.float64]:
        """``J_lam(p) = (I + lam A)^{-1} p``."""
        if not lam > 0:
            raise ValueError(f"resolvent step must be positive, got {lam}")
        p = np.asarray(p, dtype=float)
        if self.kind == "zero":
            return p.copy()
        if self.kind == "indicator":
            return self.domain.project(p)
        if self.kind == "linear":
            G = np.eye(self.dim) + lam * self.matrix
            return np.linalg.solve(G, p.T).T
        return self._composite_resolvent(lam, p)

    def _composite_resolvent(self, lam: float, p) -> NDArray[np.float64]:
        # minimise over the domain the strongly monotone residual (I + lam M) x - p
        # with projected forward steps; step 1/L (symmetric) or 1/L^2 (general)
        single = p.ndim == 1
        P = np.atleast_2d(p)
        G = np.eye(self.dim) + lam * self.matrix
        L = float(np.linalg.norm(G, 2))
        symmetric = np.allclose(self.matrix, self.matrix.T, atol=1e-14)
        tau = 1.0 / L if symmetric else 1.0 / L**2
        x = self.domain.project(np.linalg.solve(G, P.T).T)
        change = np.inf
        for _ in range(COMPOSITE_MAX_ITER):
            x_new = self.domain.project(x - tau * (x @ G.T - P))
            change = float(np.max(np.abs(x_new - x)))
            x = x_new
            if change <= RESOLVENT_TOL:
                break
        else:
            raise ConvergenceError("composite resolvent iteration did not converge", change)
        return x[0] if single else x

    def yosida(self, lam: float, p) -> NDArray[np.float64]:
        """``(p - J_lam(p)) / lam``, an element of ``A(J_lam(p))``."""
        p = np.asarray(p, dtype=float)
        return (p - self.resolvent(lam, p)) / lam

    def graph_samples(self, rng: np.random.Generator, n: int, scale: float = 2.0) -> list[GraphSample]:
        """Random points of Gr(A) as ``(J_lam z, A_lam z)`` for random z, lam."""
        a = self.closure_domain.interior_point
        z = a + scale * rng.standard_normal((n, self.dim))
        lams = rng.uniform(0.05, 2.0, size=n)
        out = []
        for zi, li in zip(z, lams):
            x = self.resolvent(li, zi)
            out.append(GraphSample(x, (zi - x) / li))
        return out


def project(domain: ConvexDomain, p) -> NDArray[np.float64]:
    return domain.project(p)


def resolvent(op: MonotoneOperator, lam: float, p) -> NDArray[np.float64]:
    return op.resolvent(lam, p)


def yosida(op: MonotoneOperator, lam: float, p) -> NDArray[np.float64]:
    return op.yosida(lam, p)


class GraphSample(NamedTuple):
    """A pair (x, y) with y in A(x)."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]


class CheckResult(NamedTuple):
    ok: bool
    worst: float


def graph_monotonicity_check(op: MonotoneOperator | None, samples: Sequence[GraphSample],
                             tol: float = 1e-12) -> CheckResult:
    """Check ``<x - x', y - y'> >= -tol`` over all sample pairs.

    ``op`` is accepted for symmetry with the other checks; only the samples are
    inspected, so raw (possibly non-monotone) pairs can be tested too.
    """
    if len(samples) < 2:
        raise ValueError("need at least two graph samples")
    X = np.array([np.atleast_1d(s.x) for s in samples], dtype=float)
    Y = np.array([np.atleast_1d(s.y) for s in samples], dtype=float)
    dX = X[:, None, :] - X[None, :, :]
    dY = Y[:, None, :] - Y[None, :, :]
    prods = np.einsum("ijk,ijk->ij", dX, dY)
    worst = float(np.min(prods))
    return CheckResult(worst >= -tol, worst)


class CepaDiagnostic(NamedTuple):
    """Discrete terms of the Cepa inequality on [s, t] for an interior point a.

    ``pairing = int <X - a, dK>``, ``variation = |K|_s^t``,
    ``distance = int |X - a| dr``, ``duration = t - s``.
    """

    pairing: float
    variation: float
    distance: float
    duration: float

    def holds(self, lam1: float, lam2: float, lam3: float, tol: float = 1e-10) -> bool:
        rhs = lam1 * self.variation - lam2 * self.distance - lam3 * self.duration
        return self.pairing >= rhs - tol


class VariationResult(NamedTuple):
    ok: bool
    worst: float
    total_variation: float
    cepa: CepaDiagnostic | None


class VariationMonitor:
    """Streaming form of the discrete variation inequality.

    For a batch of n paths and G graph samples (x_g, y_g) it accumulates
    ``S_g(t_j) = sum_{i<j} <X_{i+1} - x_g, dK_i - y_g dt>`` and tracks the
    smallest increment ``S_g(t) - S_g(s)`` over all subintervals ``s < t``.
    X is paired with the increment ending at it (the post-resolvent state).
    """

    def __init__(self, samples: Sequence[GraphSample], n: int, dim: int):
        if samples:
            self.xs = np.array([np.atleast_1d(s.x) for s in samples], dtype=float).reshape(-1, dim)
            self.ys = np.array([np.atleast_1d(s.y) for s in samples], dtype=float).reshape(-1, dim)
        else:
            self.xs = np.zeros((0, dim))
            self.ys = np.zeros((0, dim))
        G = self.xs.shape[0]
        self._xy = np.einsum("gk,gk->g", self.xs, self.ys)
        self.cum = np.zeros((n, G))
        self.runmax = np.zeros((n, G))
        self.worst = np.zeros((n, G))
        self.variation = np.zeros(n)

    def update(self, x_new: NDArray, dk: NDArray, dt: float) -> None:
        self.variation += np.linalg.norm(dk, axis=1)
        if self.xs.shape[0] == 0:
            return
        term = (np.einsum("nk,nk->n", x_new, dk)[:, None]
                - dt * (x_new @ self.ys.T)
                - dk @ self.xs.T
                + dt * self._xy[None, :])
        self.cum += term
        np.minimum(self.worst, self.cum - self.runmax, out=self.worst)
        np.maximum(self.runmax, self.cum, out=self.runmax)

    def worst_per_path(self) -> NDArray[np.float64]:
        if self.worst.shape[1] == 0:
            return np.zeros(self.worst.shape[0])
        return np.min(self.worst, axis=1)

    def passes(self, tol: float = 1e-8) -> NDArray[np.bool_]:
        return self.worst_per_path() >= -tol * (1.0 + self.variation)


def cepa_diagnostic(X: SamplePath, K: FiniteVariationPath, a, s: float = 0.0,
                    t: float | None = None) -> CepaDiagnostic:
    times = X.grid.times
    t = X.grid.horizon if t is None else t
    mask = (times[:-1] >= s - 1e-12) & (times[1:] <= t + 1e-12)
    a = np.asarray(a, dtype=float)
    Xr = X.values[1:][mask] - a
    dK = K.increments[mask]
    return CepaDiagnostic(
        pairing=float(np.sum(np.einsum("ik,ik->i", Xr, dK))),
        variation=float(np.sum(np.linalg.norm(dK, axis=1))),
        distance=float(np.sum(np.linalg.norm(Xr, axis=1)) * X.grid.dt),
        duration=float(t - s),
    )


def variation_inequality_check(X: SamplePath, K: FiniteVariationPath, graph: Sequence[GraphSample],
                               tol: float = 1e-8, interior_point=None) -> VariationResult:
    """Discrete analogue of ``<X_t - x, dK_t - y dt> >= 0`` for (x, y) in Gr(A).

    Passes when, for every graph sample and every grid subinterval, the summed
    pairing is at least ``-tol * (1 + |K|_TV)``. If ``interior_point`` is given
    the Cepa diagnostic over the whole horizon is attached.
    """
    if X.grid != K.grid:
        raise GridMismatchError("X and K must share the time grid")
    if X.dim != K.dim:
        raise GridMismatchError("X and K must share the dimension")
    mon = VariationMonitor(graph, 1, X.dim)
    dt = X.grid.dt
    for i in range(X.grid.steps):
        mon.update(X.values[i + 1][None, :], K.increments[i][None, :], dt)
    worst = float(mon.worst_per_path()[0])
    tv = float(mon.variation[0])
    cepa = None if interior_point is None else cepa_diagnostic(X, K, interior_point)
    return VariationResult(bool(worst >= -tol * (1.0 + tv)), worst, tv, cepa)
