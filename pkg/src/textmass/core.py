"""Deterministic numeric primitives shared by every stage of the pipeline.

Everything here is pure and reentrant: cosine similarity, a numerically safe
softmax, seeded Gaussian sampling with independent substreams, and a central
finite-difference gradient oracle used to verify hand-written backward passes.

All accumulation is double precision. Randomness flows through :class:`SeededRng`,
which couples a 64-bit seed with a 64-bit stream id; distinct stream ids give
independent substreams and identical (seed, stream) pairs replay bit-exactly.
"""

from __future__ import annotations

import numpy as np

# Zero-norm guard added to cosine denominators.
NORM_GUARD = 1e-12

_U64 = (1 << 64) - 1


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateGeometryError(ContractViolation):
    """Geometric construction undefined for the given inputs (e.g. v == t)."""


class FormatError(IOError):
    """A serialized file is malformed; message names the failing byte offset."""


class OracleFailure(RuntimeError):
    """A verification oracle could not be evaluated (non-finite function value)."""


def stream_key(*parts: int) -> int:
    """Fold integer ids into a single 64-bit stream id (splitmix64 per part).

    Used to derive one substream per logical consumer, e.g. per (epoch,) or
    per (query-id, candidate-id). Deterministic and order-sensitive.
    """
    h = 0
    for p in parts:
        h = (h ^ (int(p) & _U64)) & _U64
        # splitmix64 finalizer
        h = (h + 0x9E3779B97F4A7C15) & _U64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        h = z ^ (z >> 31)
    return h


class SeededRng:
    """Seeded random source with independent, replayable substreams.

    A (seed, stream) pair fully determines the sample sequence. Gaussian
    variates are produced by a fixed Box-Muller transform of the underlying
    uniform stream (interleaved cos/sin halves), so that a draw of n values
    is always a prefix of a longer draw from the same state. Each call to
    :meth:`standard_normal` consumes ``2 * ceil(n / 2)`` uniform doubles.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _U64
        self.stream = int(stream) & _U64
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, self.stream]))
        )

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1)."""
        return self._gen.random(int(n))

    def standard_normal(self, n: int) -> np.ndarray:
        """n independent N(0, 1) draws via Box-Muller on the uniform stream."""
        n = int(n)
        if n < 1:
            raise ContractViolation(f"sample count must be >= 1, got {n}")
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1]: keeps log() finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(ang)
        z[1::2] = r * np.sin(ang)
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): argsort of n uniforms."""
        return np.argsort(self.uniform(n), kind="stable")


def substream(seed: int, *parts: int) -> SeededRng:
    """Rng on the substream keyed by the given id tuple."""
    return SeededRng(seed, stream_key(*parts))


def sample_gaussian(rng: SeededRng, d: int) -> np.ndarray:
    """d-dimensional standard-normal vector; advances the rng state."""
    if d < 1:
        raise ContractViolation(f"dimension must be >= 1, got {d}")
    return rng.standard_normal(d)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1].

    Denominator carries a 1e-12 guard so degenerate zero vectors do not
    divide by zero (they return 0 instead of NaN).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    s = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b) + NORM_GUARD))
    return float(min(1.0, max(-1.0, s)))


def softmax(logits: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Probability vector softmax(scale * logits), max-subtracted for stability."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ContractViolation("softmax requires a non-empty 1-d logit vector")
    z = scale * x
    e = np.exp(z - z.max())
    return e / e.sum()


def finite_diff_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.

    f must be deterministic; every evaluation is checked for finiteness.
    This routine stays independent of any analytic backward pass it verifies.
    """
    x = np.asarray(x, dtype=np.float64)
    if h <= 0:
        raise ContractViolation(f"step size must be positive, got {h}")
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailure(f"non-finite evaluation at coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad
