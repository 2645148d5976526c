"""Counter-based Gaussian noise streams.

Particles are grouped in fixed blocks of ``BLOCK`` indices. Block ``k`` of
replica ``r`` under base seed ``s`` owns a Philox generator keyed by the seed
sequence ``(s, spawn_key=(r, k))`` and emits one ``(BLOCK, d)`` draw per time
step. Particle ``j`` reads column ``j % BLOCK`` of block ``j // BLOCK``, so its
increments do not depend on the ensemble size, the chunking or the thread
schedule.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

BLOCK = 1024


def _generator(seed: int, replica: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica), int(block)))
    return np.random.Generator(np.random.Philox(ss))


class NoiseStream:
    """Brownian increments ``sqrt(dt) * N(0, I_d)`` for particles ``start..start+n-1``."""

    def __init__(self, seed: int, replica: int, n: int, dim: int, dt: float, start: int = 0):
        if n < 1:
            raise ValueError("need at least one particle")
        self.seed, self.replica, self.n, self.dim = int(seed), int(replica), int(n), int(dim)
        self.start = int(start)
        self.scale = float(np.sqrt(dt))
        first, last = self.start // BLOCK, (self.start + n - 1) // BLOCK
        self._gens = [_generator(seed, replica, k) for k in range(first, last + 1)]
        self._offset = self.start - first * BLOCK

    def next(self) -> NDArray[np.float64]:
        """Increments for the next time step, shape ``(n, d)``."""
        draws = [g.standard_normal((BLOCK, self.dim)) for g in self._gens]
        z = draws[0] if len(draws) == 1 else np.concatenate(draws, axis=0)
        return self.scale * z[self._offset:self._offset + self.n]

    def take(self, steps: int) -> NDArray[np.float64]:
        """Increments for ``steps`` consecutive steps, shape ``(n, steps, d)``."""
        return np.stack([self.next() for _ in range(steps)], axis=1)


def particle_increments(seed: int, replica: int, particle: int, steps: int, dim: int,
                        dt: float) -> NDArray[np.float64]:
    """The full increment sequence of a single particle, shape ``(steps, dim)``."""
    return NoiseStream(seed, replica, 1, dim, dt, start=particle).take(steps)[0]
