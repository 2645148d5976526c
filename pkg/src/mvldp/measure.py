"""Equal-weight empirical measures and Wasserstein-2 distances."""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

ASSIGNMENT_CAP = 1024


class EmpiricalMeasure:
    """N equally weighted atoms in R^d.

    Coefficients read the law only through the probes below (mean, second
    moment, expectations of functionals), which keeps a particle step O(N).
    Moments are computed about the first atom so that an ensemble of
    identical atoms reproduces the Dirac values bit for bit.
    """

    __slots__ = ("atoms", "_mean")

    def __init__(self, atoms):
        a = np.asarray(atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError(f"atoms must have shape (N, d) with N >= 1, got {np.shape(atoms)}")
        self.atoms = a
        self._mean = None

    @classmethod
    def dirac(cls, point) -> EmpiricalMeasure:
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :])

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> NDArray[np.float64]:
        if self._mean is None:
            ref = self.atoms[0]
            self._mean = ref + np.mean(self.atoms - ref, axis=0)
        return self._mean

    def second_moment(self) -> float:
        m = self.mean()
        return float(m @ m + np.mean(np.sum((self.atoms - m) ** 2, axis=1)))

    def variance(self) -> float:
        m = self.mean()
        return float(np.mean(np.sum((self.atoms - m) ** 2, axis=1)))

    def expect(self, fn: Callable[[NDArray], NDArray]) -> NDArray[np.float64]:
        """Mean of ``fn`` applied row-wise to the atoms (fn is vectorised over rows)."""
        return np.mean(np.asarray(fn(self.atoms), dtype=float), axis=0)

    def __repr__(self):
        return f"EmpiricalMeasure(N={self.size}, d={self.dim})"


def dirac(point) -> EmpiricalMeasure:
    return EmpiricalMeasure.dirac(point)


def second_moment(mu: EmpiricalMeasure) -> float:
    return mu.second_moment()


def _atoms(mu) -> NDArray[np.float64]:
    return mu.atoms if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu).atoms


def w2_1d(mu, nu) -> float:
    """Exact W2 between two 1-d equal-weight measures by sorted pairing."""
    x, y = _atoms(mu), _atoms(nu)
    if x.shape[1] != 1 or y.shape[1] != 1:
        raise ValueError("w2_1d needs one-dimensional measures")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"atom counts differ: {x.shape[0]} vs {y.shape[0]}")
    xs, ys = np.sort(x[:, 0]), np.sort(y[:, 0])
    return float(np.sqrt(np.mean((xs - ys) ** 2)))


def w2_assignment(mu, nu) -> float:
    """Exact W2 between equal-weight measures via an optimal assignment."""
    x, y = _atoms(mu), _atoms(nu)
    if x.shape != y.shape:
        raise ValueError(f"atom clouds must have equal shape, got {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n > ASSIGNMENT_CAP:
        raise ValueError(
            f"N={n} exceeds the assignment cap {ASSIGNMENT_CAP}; use w2_coupled_bound on "
            "synchronously coupled samples for an upper bound instead")
    cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(np.sum(cost[rows, cols]) / n, 0.0)))


def w2_coupled_bound(x, y) -> float:
    """``sqrt(mean |x_i - y_i|^2)`` for index-paired samples, an upper bound on W2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"paired samples must have equal shape, got {x.shape} vs {y.shape}")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    return float(np.sqrt(np.mean(np.sum((x - y) ** 2, axis=1))))
