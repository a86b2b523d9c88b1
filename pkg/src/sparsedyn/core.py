"""Shared numeric containers, RNG contract, and convergence bookkeeping.

Everything downstream (AR estimation, point-process fits, state-space
deconvolution, multiplicative updates) builds on the small set of types
and helpers defined here.
"""

from dataclasses import dataclass, field

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised when an operation is called outside its contract."""


class NumericalFailureError(RuntimeError):
    """Raised when a solver hits an unrecoverable numerical condition."""


@dataclass(frozen=True)
class TimeSeries:
    """A real-valued signal with an explicit (possibly negative) time origin.

    ``values[k - start_index]`` is the sample at time ``k``.  AR-style data
    uses ``start_index = -p + 1`` so that the ``p`` history samples preceding
    time 1 are addressable.
    """

    values: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise InvalidArgumentError("TimeSeries needs a nonempty 1-d array")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("TimeSeries values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def end_index(self) -> int:
        return self.start_index + self.values.size - 1

    def at(self, k: int) -> float:
        """Sample at absolute time index ``k``."""
        pos = k - self.start_index
        if pos < 0 or pos >= self.values.size:
            raise InvalidArgumentError(f"time index {k} out of range")
        return float(self.values[pos])

    def window(self, k0: int, k1: int) -> np.ndarray:
        """Samples at times ``k0..k1`` inclusive."""
        if k0 < self.start_index or k1 > self.end_index or k1 < k0:
            raise InvalidArgumentError(f"window [{k0},{k1}] out of range")
        a = k0 - self.start_index
        return self.values[a : a + (k1 - k0 + 1)]


@dataclass(frozen=True)
class RngSpec:
    """Deterministic RNG contract: same (seed, algorithm) => identical draws.

    The generator algorithm is pinned to PCG64 so that simulated sequences
    are bit-identical across runs and platforms.
    """

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        if self.algorithm != "pcg64":
            raise InvalidArgumentError(f"unknown rng algorithm {self.algorithm!r}")
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass
class SolverTrace:
    """Per-solve bookkeeping shared by all iterative solvers."""

    objective_per_iter: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tolerance_used: float = 0.0
    flags: list = field(default_factory=list)

    def record(self, value: float):
        self.objective_per_iter.append(float(value))
        self.iterations = len(self.objective_per_iter)

    def flag(self, message: str):
        self.flags.append(message)

    def as_dict(self) -> dict:
        return {
            "objective_per_iter": list(self.objective_per_iter),
            "iterations": self.iterations,
            "converged": self.converged,
            "tolerance_used": self.tolerance_used,
            "flags": list(self.flags),
        }


def support(v: np.ndarray, s: int) -> np.ndarray:
    """Indices of the ``min(s, p)`` largest-magnitude entries of ``v``.

    Ties in magnitude are broken toward the lowest index, so the result is
    deterministic.
    """
    v = np.asarray(v, dtype=float)
    p = v.size
    if s < 0 or s > p:
        raise InvalidArgumentError(f"sparsity level s={s} outside [0, {p}]")
    order = np.argsort(-np.abs(v), kind="stable")
    return np.sort(order[:s])


def best_s_approx(v: np.ndarray, s: int) -> np.ndarray:
    """Best s-term approximation: zero all but the s largest-magnitude entries."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    idx = support(v, s)
    out[idx] = v[idx]
    return out


def compressibility(v: np.ndarray, s: int) -> tuple:
    """(l1, l2) norms of the residual after the best s-term approximation.

    Returns ``(sigma_s, varsigma_s)`` with ``varsigma_s <= sigma_s`` always.
    """
    v = np.asarray(v, dtype=float)
    tail = v - best_s_approx(v, s)
    return float(np.sum(np.abs(tail))), float(np.linalg.norm(tail))
