"""Drift/diffusion coefficient sets, perturbation families and drift Jacobians.

A drift is a callable ``b(x, mu)`` taking a batch ``x`` of shape ``(n, d)`` and
an :class:`~mvldp.measure.EmpiricalMeasure` and returning ``(n, d)``. A
diffusion ``sigma(x, mu)`` returns ``(n, d, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .measure import EmpiricalMeasure

Drift = Callable[[NDArray, EmpiricalMeasure], NDArray]
Diffusion = Callable[[NDArray, EmpiricalMeasure], NDArray]


def _zero_rate(eps: float) -> float:
    return 0.0


@dataclass(frozen=True)
class PowerRate:
    """``rho(eps) = coef * eps ** power``."""

    coef: float = 0.0
    power: float = 1.0

    def __call__(self, eps: float) -> float:
        if self.coef == 0.0:
            return 0.0
        return float(self.coef * eps**self.power)


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients b, sigma with optional perturbed families and Jacobian.

    ``drift_eps``/``diffusion_eps`` map eps to the perturbed callables; when
    absent the unperturbed ones are used and ``rho_b = rho_sigma = 0``.
    ``law_free`` marks coefficients that ignore the measure argument.
    """

    dim: int
    drift: Drift
    diffusion: Diffusion
    drift_eps: Callable[[float], Drift] | None = None
    diffusion_eps: Callable[[float], Diffusion] | None = None
    rho_b: Callable[[float], float] = _zero_rate
    rho_sigma: Callable[[float], float] = _zero_rate
    lipschitz: float | None = None
    growth: float | None = None
    drift_jacobian: Callable[[NDArray, EmpiricalMeasure], NDArray] | None = None
    jacobian_lipschitz: float | None = None
    jacobian_growth: float | None = None
    law_free: bool = False
    name: str = field(default="custom", compare=False)

    def b(self, eps: float | None = None) -> Drift:
        if eps is None or self.drift_eps is None:
            return self.drift
        return self.drift_eps(eps)

    def sigma(self, eps: float | None = None) -> Diffusion:
        if eps is None or self.diffusion_eps is None:
            return self.diffusion
        return self.diffusion_eps(eps)

    def with_perturbation(self, rho_b: Callable[[float], float] | None = None,
                          rho_sigma: Callable[[float], float] | None = None,
                          direction=None) -> CoefficientSet:
        """Shift perturbations ``b_eps = b + rho_b(eps) e`` and ``sigma_eps = sigma + rho_sigma(eps) I``.

        Both satisfy the uniform-closeness bounds with equality.
        """
        rho_b = rho_b or _zero_rate
        rho_sigma = rho_sigma or _zero_rate
        e = np.zeros(self.dim)
        e[0] = 1.0
        if direction is not None:
            e = np.asarray(direction, dtype=float)
            e = e / np.linalg.norm(e)
        base_b, base_s = self.drift, self.diffusion
        eye = np.eye(self.dim)

        def drift_eps(eps):
            shift = rho_b(eps) * e
            if not np.any(shift):
                return base_b
            return lambda x, mu: base_b(x, mu) + shift

        def diffusion_eps(eps):
            r = rho_sigma(eps)
            if r == 0.0:
                return base_s
            return lambda x, mu: base_s(x, mu) + r * eye

        return replace(self, drift_eps=drift_eps, diffusion_eps=diffusion_eps,
                       rho_b=rho_b, rho_sigma=rho_sigma)


# -- named families ----------------------------------------------------------

def _as_matrix(a, dim: int) -> NDArray[np.float64]:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1:
        return np.diag(a)
    return a


def _as_vector(c, dim: int) -> NDArray[np.float64]:
    c = np.asarray(c, dtype=float)
    return np.full(dim, float(c)) if c.ndim == 0 else c.reshape(dim)


def constant_drift(value, dim: int = 1) -> tuple[Drift, Callable]:
    c = _as_vector(value, dim)
    zero = np.zeros((dim, dim))

    def b(x, mu):
        return np.broadcast_to(c, x.shape).copy()

    def jac(x, mu):
        return np.broadcast_to(zero, (x.shape[0], dim, dim)).copy()

    return b, jac


def linear_drift(a, c=0.0, dim: int = 1) -> tuple[Drift, Callable]:
    """``b(x) = a x + c``."""
    A = _as_matrix(a, dim)
    cv = _as_vector(c, dim)

    def b(x, mu):
        return x @ A.T + cv

    def jac(x, mu):
        return np.broadcast_to(A, (x.shape[0], dim, dim)).copy()

    return b, jac


def mean_field_linear_drift(alpha: float, beta: float, gamma=0.0, dim: int = 1) -> tuple[Drift, Callable]:
    """``b(x, mu) = alpha x + beta (x - mean(mu)) + gamma``."""
    g = _as_vector(gamma, dim)
    J = (alpha + beta) * np.eye(dim)

    def b(x, mu):
        return alpha * x + beta * (x - mu.mean()) + g

    def jac(x, mu):
        return np.broadcast_to(J, (x.shape[0], dim, dim)).copy()

    return b, jac


def constant_diffusion(scale, dim: int = 1) -> Diffusion:
    S = _as_matrix(scale, dim)

    def sigma(x, mu):
        return np.broadcast_to(S, (x.shape[0], dim, dim)).copy()

    return sigma


def state_linear_diffusion(s0, s1, dim: int = 1) -> Diffusion:
    """``sigma(x) = diag(s0 + s1 * x)``."""
    a = _as_vector(s0, dim)
    k = _as_vector(s1, dim)
    idx = np.arange(dim)

    def sigma(x, mu):
        out = np.zeros((x.shape[0], dim, dim))
        out[:, idx, idx] = a + k * x
        return out

    return sigma


def make_coefficients(drift: str, diffusion: str, dim: int = 1, drift_params: dict | None = None,
                      diffusion_params: dict | None = None) -> CoefficientSet:
    """Build a :class:`CoefficientSet` from named families."""
    dp = dict(drift_params or {})
    sp = dict(diffusion_params or {})
    law_free = True
    if drift == "constant":
        b, jac = constant_drift(dp.get("value", 0.0), dim)
        L = 0.0
    elif drift == "linear":
        a = dp.get("a", 0.0)
        b, jac = linear_drift(a, dp.get("c", 0.0), dim)
        L = float(np.linalg.norm(_as_matrix(a, dim), 2))
    elif drift == "mean-field-linear":
        alpha, beta = float(dp.get("alpha", 0.0)), float(dp.get("beta", 0.0))
        b, jac = mean_field_linear_drift(alpha, beta, dp.get("gamma", 0.0), dim)
        L = max(abs(alpha + beta), abs(beta))
        law_free = beta == 0.0
    elif drift in DRIFT_PLUGINS:
        b, jac = DRIFT_PLUGINS[drift](dim=dim, **dp)
        L = None
        law_free = False
    else:
        raise ValueError(f"unknown drift family {drift!r}")
    if diffusion == "constant":
        sig = constant_diffusion(sp.get("scale", 1.0), dim)
        Ls = 0.0
    elif diffusion == "state-linear":
        sig = state_linear_diffusion(sp.get("s0", 1.0), sp.get("s1", 0.0), dim)
        Ls = float(np.max(np.abs(_as_vector(sp.get("s1", 0.0), dim))))
    elif diffusion in DIFFUSION_PLUGINS:
        sig = DIFFUSION_PLUGINS[diffusion](dim=dim, **sp)
        Ls = None
        law_free = False
    else:
        raise ValueError(f"unknown diffusion family {diffusion!r}")
    lip = None if L is None or Ls is None else max(L, Ls, 1e-12)
    return CoefficientSet(dim=dim, drift=b, diffusion=sig, lipschitz=lip, growth=0.0,
                          drift_jacobian=jac, jacobian_lipschitz=0.0, jacobian_growth=0.0,
                          law_free=law_free, name=f"{drift}/{diffusion}")


DRIFT_PLUGINS: dict[str, Callable[..., tuple[Drift, Callable | None]]] = {}
DIFFUSION_PLUGINS: dict[str, Callable[..., Diffusion]] = {}


def register_drift(name: str, factory: Callable[..., tuple[Drift, Callable | None]]) -> None:
    """Register a compiled-in drift family; ``factory(dim=..., **params) -> (b, jacobian_or_None)``."""
    DRIFT_PLUGINS[name] = factory


def register_diffusion(name: str, factory: Callable[..., Diffusion]) -> None:
    DIFFUSION_PLUGINS[name] = factory


# -- Jacobians ---------------------------------------------------------------

class JacobianField:
    """``b'(x, mu)``: analytic if supplied, otherwise central differences.

    The default difference step is ``h = 1e-5 * (1 + |x|)`` per point.
    """

    def __init__(self, drift: Drift, analytic: Callable | None = None, step: float | None = None):
        self.drift = drift
        self.analytic = analytic
        self.step = step

    @classmethod
    def for_coefficients(cls, coeffs: CoefficientSet, prefer_analytic: bool = True) -> JacobianField:
        return cls(coeffs.drift, coeffs.drift_jacobian if prefer_analytic else None)

    @property
    def source(self) -> str:
        return "analytic" if self.analytic is not None else "finite-difference"

    def __call__(self, x, mu: EmpiricalMeasure) -> NDArray[np.float64]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.analytic is not None:
            out = np.asarray(self.analytic(x, mu), dtype=float)
        else:
            out = self.finite_difference(x, mu, self.step)
        if not np.all(np.isfinite(out)):
            raise ArithmeticError("Jacobian evaluation produced non-finite values")
        return out

    def finite_difference(self, x, mu: EmpiricalMeasure, step: float | None = None) -> NDArray[np.float64]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if step is None:
            h = 1e-5 * (1.0 + np.linalg.norm(x, axis=1))
        else:
            h = np.full(n, float(step))
        out = np.empty((n, d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            hp = h[:, None] * e
            out[:, :, k] = (self.drift(x + hp, mu) - self.drift(x - hp, mu)) / (2 * h[:, None])
        return out


# -- sampled assumption checks ----------------------------------------------

def one_sided_lipschitz_check(coeffs: CoefficientSet, rng: np.random.Generator, probes: int = 256,
                              scale: float = 3.0, mu: EmpiricalMeasure | None = None) -> tuple[bool, float]:
    """Largest sampled ``<x - x', b(x) - b(x')> / |x - x'|^2`` versus the declared L."""
    d = coeffs.dim
    mu = mu if mu is not None else EmpiricalMeasure(rng.standard_normal((16, d)))
    x = scale * rng.standard_normal((probes, d))
    y = scale * rng.standard_normal((probes, d))
    b = coeffs.drift
    diff = x - y
    ratio = np.einsum("nk,nk->n", diff, b(x, mu) - b(y, mu)) / np.sum(diff**2, axis=1)
    worst = float(np.max(ratio))
    if coeffs.lipschitz is None:
        return True, worst
    return worst <= coeffs.lipschitz * (1 + 1e-9) + 1e-12, worst


def uniform_closeness_check(coeffs: CoefficientSet, eps: float, rng: np.random.Generator,
                            probes: int = 256, scale: float = 3.0) -> tuple[bool, float, float]:
    """Sampled sup of ``|b_eps - b|`` and the operator norm ``||sigma_eps - sigma||`` against rho_b, rho_sigma."""
    d = coeffs.dim
    mu = EmpiricalMeasure(rng.standard_normal((16, d)))
    x = scale * rng.standard_normal((probes, d))
    db = float(np.max(np.linalg.norm(coeffs.b(eps)(x, mu) - coeffs.drift(x, mu), axis=1)))
    ds = float(np.max(np.linalg.norm(coeffs.sigma(eps)(x, mu) - coeffs.diffusion(x, mu), ord=2, axis=(1, 2))))
    ok = db <= coeffs.rho_b(eps) * (1 + 1e-9) + 1e-12 and ds <= coeffs.rho_sigma(eps) * (1 + 1e-9) + 1e-12
    return ok, db, ds
