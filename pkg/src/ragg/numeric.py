"""Sample containers, deterministic randomness, statistics, and eigensolvers.

Everything downstream (filtering, projection, attack generation) is built on
the primitives here. All randomness flows through RngStream so that runs are
reproducible bit-for-bit from a 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

_MASK64 = (1 << 64) - 1


class EmptySampleSet(ValueError):
    """Raised when a statistic is requested over zero samples."""


def _mix64(x: int) -> int:
    # splitmix64 finalizer; used to derive child seeds
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass
class RngStream:
    """Counter-based deterministic random stream.

    Uniform draws come from a Philox bit generator keyed by ``seed``; normal
    draws are a Box-Muller transform consuming exactly two uniforms each, so
    the number of base draws per operation is fixed and documented. ``draws``
    counts uniforms consumed. Identical seeds give identical sequences, and
    splitting a request into chunks does not change the stream.
    """

    seed: int
    draws: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._gen = np.random.Generator(np.random.Philox(key=self.seed & _MASK64))

    def uniform(self, size: int) -> np.ndarray:
        """Return ``size`` uniforms in [0, 1), consuming ``size`` draws."""
        self.draws += int(size)
        return self._gen.random(int(size))

    def normal(self, size: int) -> np.ndarray:
        """Return ``size`` standard normals, consuming ``2 * size`` draws."""
        u = self.uniform(2 * int(size))
        u1, u2 = u[0::2], u[1::2]
        # log1p(-u1) keeps the argument in (0, 1] so the log is always finite
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def derive(self, index: int) -> "RngStream":
        """Child stream with a seed mixed from (seed, index); independent of
        this stream's position."""
        return RngStream(_mix64((self.seed & _MASK64) ^ _mix64(index & _MASK64)))


@dataclass(frozen=True)
class SampleSet:
    """An n x d matrix of samples (rows) with validated, finite entries."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise EmptySampleSet(f"need n >= 1 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite (no NaN/Inf)")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def take(self, rows: np.ndarray) -> "SampleSet":
        """Subset by row indices, keeping row order."""
        return SampleSet(self.data[np.asarray(rows, dtype=np.intp)])


@dataclass(frozen=True)
class EigenEstimate:
    """Dominant eigenpair estimate with the iteration count that produced it."""

    eigenvalue: float
    eigenvector: np.ndarray
    iterations_used: int
    degenerate: bool = False


def _rows(s: Union[SampleSet, np.ndarray]) -> np.ndarray:
    return s.data if isinstance(s, SampleSet) else np.asarray(s, dtype=np.float64)


def mean(s: Union[SampleSet, np.ndarray]) -> np.ndarray:
    """Arithmetic mean of rows.

    Summation is numpy's fixed pairwise reduction over ascending row index,
    so the result is identical run to run.
    """
    x = _rows(s)
    if x.shape[0] == 0:
        raise EmptySampleSet("mean of an empty sample set")
    return x.mean(axis=0)


def covariance(s: Union[SampleSet, np.ndarray]) -> np.ndarray:
    """Population covariance (1/n) * X~^T X~ with X~ the mean-centered rows.

    Explicitly symmetrized so downstream symmetry guards never trip on
    rounding noise from the matrix product.
    """
    x = _rows(s)
    if x.shape[0] == 0:
        raise EmptySampleSet("covariance of an empty sample set")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    return (cov + cov.T) / 2.0


def covariance_matvec(s: Union[SampleSet, np.ndarray], v: np.ndarray) -> np.ndarray:
    """Compute covariance(s) @ v in O(nd) without forming the d x d matrix."""
    x = _rows(s)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (x.shape[1],):
        raise ValueError(f"vector has shape {v.shape}, need ({x.shape[1]},)")
    centered = x - x.mean(axis=0)
    return centered.T @ (centered @ v) / x.shape[0]


def power_iteration_count(k: int, eps_p: float) -> int:
    """Iterations needed for a relative eigenvalue error of eps_p at size k."""
    if not 0.0 < eps_p < 1.0:
        raise ValueError(f"eps_p must be in (0, 1), got {eps_p}")
    return math.ceil(abs(math.log(4.0 * k) / (2.0 * math.log(1.0 - eps_p))))


def power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    k: int,
    eps_p: float = 0.1,
    n_iters: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> EigenEstimate:
    """Dominant eigenpair of a symmetric PSD operator by power iteration.

    Parameters
    ----------
    matvec : callable applying the operator to a k-vector.
    k : operator size; the start vector consumes exactly k normal draws.
    eps_p : target relative eigenvalue error; sets the iteration count when
        ``n_iters`` is not given.
    n_iters : explicit iteration count, overriding the eps_p schedule.
    rng : stream supplying the random start.

    Returns the Rayleigh-quotient eigenvalue and the normalized final iterate.
    A zero operator yields eigenvalue 0, the normalized random start, and the
    degenerate flag.
    """
    if k < 1:
        raise ValueError(f"operator size must be >= 1, got {k}")
    if rng is None:
        raise ValueError("an RngStream is required for the random start")
    n = int(n_iters) if n_iters is not None else power_iteration_count(k, eps_p)

    v0 = rng.normal(k)
    v = v0 / np.linalg.norm(v0)
    for i in range(n):
        w = matvec(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v is in the kernel; for a zero operator this is the first step
            return EigenEstimate(0.0, v, i, degenerate=True)
        v = w / norm_w
    lam = float(v @ matvec(v))
    return EigenEstimate(max(lam, 0.0), v, n)


def dominant_eigen(
    matvec: Callable[[np.ndarray], np.ndarray],
    k: int,
    rng: RngStream,
    residual_tol: float = 1e-8,
    max_iters: Optional[int] = None,
) -> EigenEstimate:
    """Power iteration driven to a residual target instead of a fixed count.

    Runs until ||Mv - lambda*v|| <= residual_tol * max(1, lambda) or until
    ``max_iters`` (default 10*k). This is the high-precision solver used where
    an effectively exact eigenpair is needed at sizes too large for the Jacobi
    oracle. Consumes exactly k normal draws.
    """
    if k < 1:
        raise ValueError(f"operator size must be >= 1, got {k}")
    cap = int(max_iters) if max_iters is not None else 10 * k
    v0 = rng.normal(k)
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    used = 0
    for i in range(1, cap + 1):
        used = i
        w = matvec(v)
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= residual_tol * max(1.0, abs(lam)):
            break
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            lam = 0.0
            break
        v = w / norm_w
    return EigenEstimate(max(lam, 0.0), v, used, degenerate=(lam <= 0.0))


def exact_dominant_eigen(m: np.ndarray) -> EigenEstimate:
    """Dominant eigenpair of a small symmetric matrix via cyclic Jacobi.

    Test-oracle grade: rotations are applied in row-cyclic sweeps until the
    off-diagonal mass is negligible, and the returned pair is certified by the
    residual check ||Mv - lambda*v|| <= 1e-8 * max(1, lambda). Guarded to
    sizes <= 512; asymmetry beyond 1e-9 is rejected.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"need a square matrix, got shape {m.shape}")
    size = m.shape[0]
    if size > 512:
        raise ValueError(f"matrix size {size} exceeds the 512 oracle guard")
    if size == 0:
        raise ValueError("empty matrix")
    asym = float(np.max(np.abs(m - m.T))) if size > 1 else 0.0
    if asym > 1e-9:
        raise ValueError(f"matrix asymmetry {asym:.3e} exceeds 1e-9")

    a = (m + m.T) / 2.0
    vecs = np.eye(size)
    scale = float(np.linalg.norm(a))
    if size > 1 and scale > 0.0:
        for _ in range(60):
            off = math.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
            if off <= 1e-14 * scale:
                break
            for p in range(size - 1):
                for q in range(p + 1, size):
                    apq = a[p, q]
                    if abs(apq) <= 1e-30 * scale:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    col_p = a[:, p].copy()
                    col_q = a[:, q].copy()
                    a[:, p] = c * col_p - s * col_q
                    a[:, q] = s * col_p + c * col_q
                    row_p = a[p, :].copy()
                    row_q = a[q, :].copy()
                    a[p, :] = c * row_p - s * row_q
                    a[q, :] = s * row_p + c * row_q
                    vcol_p = vecs[:, p].copy()
                    vcol_q = vecs[:, q].copy()
                    vecs[:, p] = c * vcol_p - s * vcol_q
                    vecs[:, q] = s * vcol_p + c * vcol_q

    idx = int(np.argmax(np.diag(a)))
    lam = float(a[idx, idx])
    vec = vecs[:, idx]
    vec = vec / np.linalg.norm(vec)
    residual = float(np.linalg.norm(m @ vec - lam * vec))
    if residual > 1e-8 * max(1.0, abs(lam)):
        raise RuntimeError(f"Jacobi residual {residual:.3e} failed certification")
    if -1e-10 * max(1.0, scale) < lam < 0.0:
        lam = 0.0
    return EigenEstimate(lam, vec, 0)
