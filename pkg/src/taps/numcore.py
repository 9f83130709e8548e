"""Dense-matrix helpers and seeded randomness used by every other module.

Matrices are plain 2-D float64 numpy arrays (row-major). All operations
allocate fresh outputs; nothing here mutates its inputs, so the perturbation
pipeline stays referentially transparent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Uniform draws are clipped away from {0, 1} before the double log so the
# Gumbel transform never produces infinities.
_UNIFORM_CLIP = 1e-12


def splitmix64(x: int) -> int:
    """One splitmix64 step: a well-mixed 64-bit hash of a 64-bit input.

    Used to derive independent child seeds from a root seed; the constants
    are the standard splitmix64 multipliers.
    """
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass
class RngState:
    """Reproducible stream state: (seed, position) fully determines the next draw.

    Every draw builds a fresh generator keyed on (seed, position) and then
    advances the position, so replaying from a recorded state is exact and
    two states never share a stream.
    """

    seed: int
    position: int = 0

    def _next_generator(self) -> np.random.Generator:
        key = np.random.SeedSequence([self.seed & _MASK64, self.position & _MASK64])
        self.position += 1
        return np.random.Generator(np.random.PCG64(key))

    def clone(self) -> "RngState":
        return RngState(self.seed, self.position)


def gaussian_matrix(rng: RngState, rows: int, cols: int) -> np.ndarray:
    """Matrix of i.i.d. standard-normal entries; advances rng by one draw."""
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian_matrix needs positive dimensions, got ({rows}, {cols})")
    gen = rng._next_generator()
    return gen.standard_normal((rows, cols))


def gumbel_vector(rng: RngState, n: int, tau: float) -> np.ndarray:
    """Length-n vector of tau-scaled Gumbel(0,1) noise: tau * (-log(-log u)).

    tau=0 yields an exact zero vector; the underlying uniform draw still
    happens so the stream position advances identically for every tau.
    """
    if n < 1:
        raise ValueError(f"gumbel_vector needs n >= 1, got {n}")
    if tau < 0:
        raise ValueError(f"gumbel_vector needs tau >= 0, got {tau}")
    gen = rng._next_generator()
    u = np.clip(gen.random(n), _UNIFORM_CLIP, 1.0 - _UNIFORM_CLIP)
    return tau * -np.log(-np.log(u))


def stats(m: np.ndarray) -> tuple[float, float]:
    """Global mean and population standard deviation over all entries."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ValueError("stats of an empty matrix is undefined")
    return float(m.mean()), float(m.std())


def row_norms(m: np.ndarray) -> np.ndarray:
    """Per-row Euclidean norms."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ValueError("row_norms of an empty matrix is undefined")
    return np.linalg.norm(m, axis=1)
