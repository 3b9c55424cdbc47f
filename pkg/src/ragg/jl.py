"""Seeded Gaussian random projection from d to k = ceil(ln(d)/eps_jl^2) dims.

The projection matrix need never be stored: its standard-normal entries are
regenerated row-major from the seed, so a projection is a pure function of
(data, d, eps_jl, seed). Both application paths, streamed (project_rows) and
materialized (project_rows_with), run the same fixed block loop, so their
outputs agree bitwise; the stream is chunk-invariant, so the entries do too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import RngStream, SampleSet

_BLOCK_ROWS = 8192


def jl_dim(d: int, eps_jl: float) -> int:
    """Target dimension ceil(ln(d)/eps_jl^2). Natural log."""
    if not 0.0 < eps_jl < 1.0:
        raise ValueError(f"eps_jl must be in (0, 1), got {eps_jl}")
    if d < 2:
        raise ValueError(f"source dimension must be >= 2, got {d}")
    return max(1, math.ceil(math.log(d) / (eps_jl * eps_jl)))


@dataclass(frozen=True)
class JLProjection:
    """Spec for a seeded d -> k projection with scale 1/sqrt(k)."""

    d: int
    k: int
    seed: int

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.k)

    @classmethod
    def create(cls, d: int, eps_jl: float, seed: int) -> "JLProjection":
        return cls(d=d, k=jl_dim(d, eps_jl), seed=seed)

    def matrix(self) -> np.ndarray:
        """Materialize the full d x k matrix (unscaled standard normals)."""
        rng = RngStream(self.seed)
        return rng.normal(self.d * self.k).reshape(self.d, self.k)


def _apply_blocks(rows: np.ndarray, k: int, block_of) -> np.ndarray:
    # single shared accumulation order: ascending row blocks of A
    out = np.zeros((rows.shape[0], k))
    d = rows.shape[1]
    for start in range(0, d, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, d)
        out += rows[:, start:stop] @ block_of(start, stop)
    return out / math.sqrt(k)


def project_rows(rows: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    """(1/sqrt(k)) * rows @ A with A's entries drawn row-major from ``rng``.

    A is streamed in row blocks and never fully materialized. Consumes
    exactly rows.shape[1] * k normal draws.
    """
    return _apply_blocks(
        rows, k, lambda s, e: rng.normal((e - s) * k).reshape(e - s, k)
    )


def project_rows_with(rows: np.ndarray, a: np.ndarray) -> np.ndarray:
    """(1/sqrt(k)) * rows @ a for a materialized projection matrix.

    Follows the same block order as project_rows, so for a produced by
    JLProjection.matrix() the two paths return bitwise-equal results.
    """
    if rows.shape[1] != a.shape[0]:
        raise ValueError(f"rows have {rows.shape[1]} dims, matrix has {a.shape[0]}")
    return _apply_blocks(rows, a.shape[1], lambda s, e: a[s:e])


def project(s: SampleSet, p: JLProjection) -> SampleSet:
    """Y = (1/sqrt(k)) * X A, deterministic per p.seed."""
    if s.d != p.d:
        raise ValueError(f"sample dimension {s.d} does not match projection d={p.d}")
    return SampleSet(project_rows(s.data, p.k, RngStream(p.seed)))
