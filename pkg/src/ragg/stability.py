"""Empirical (eps, delta)-stability checking for clean sample sets.

A set S is (eps, delta)-stable when every subset keeping at least a (1-eps)
fraction of S has, along every unit direction, mean within delta of the full
mean and mean squared deviation within delta^2/eps of the top covariance
eigenvalue. Certifying that over all directions is intractable, so this
checker samples seeded random directions and, per direction, finds the exact
worst subset by dropping extreme projections greedily (which is optimal in
one dimension). A failure is therefore a genuine counterexample; a pass is
evidence whose strength grows with directions_tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import RngStream, SampleSet, covariance, covariance_matvec, dominant_eigen


@dataclass(frozen=True)
class StabilityReport:
    eps: float
    delta: float
    max_mean_dev: float
    max_var_dev: float
    directions_tested: int
    holds: bool
    worst_mean_direction: np.ndarray
    worst_var_direction: np.ndarray

    def var_bound(self) -> float:
        """delta^2/eps, the allowance for condition (2); infinite at eps=0."""
        if self.eps == 0.0:
            return math.inf
        return self.delta * self.delta / self.eps


def _top_eigenvalue(s: SampleSet, rng: RngStream) -> float:
    if s.d <= max(2 * s.n, 1024):
        cov = covariance(s)
        est = dominant_eigen(lambda v: cov @ v, s.d, rng)
    else:
        est = dominant_eigen(lambda v: covariance_matvec(s, v), s.d, rng)
    return max(est.eigenvalue, 0.0)


def default_delta(s: SampleSet) -> float:
    """sqrt(20 * top covariance eigenvalue), the standard stability margin.

    Uses a fixed internal seed for the eigensolver start vector so the value
    is a pure function of the data.
    """
    return math.sqrt(20.0 * _top_eigenvalue(s, RngStream(0)))


def _extremes_dropped_means(sorted_vals: np.ndarray, m: int) -> tuple[float, float]:
    """Subset means after dropping the m largest / m smallest entries."""
    n = sorted_vals.size
    total = float(sorted_vals.sum())
    keep = n - m
    drop_top = float(sorted_vals[n - m :].sum()) if m else 0.0
    drop_bottom = float(sorted_vals[:m].sum()) if m else 0.0
    return (total - drop_top) / keep, (total - drop_bottom) / keep


def check_stability(
    s: SampleSet,
    eps: float,
    delta: float,
    n_directions: int = 256,
    rng: RngStream | None = None,
) -> StabilityReport:
    """Search seeded directions for the worst (1-eps)-subset deviations.

    For the mean condition the worst subset along v drops the floor(eps*n)
    most one-sided projections (both signs are covered because both tails are
    tried). For the variance condition the extremes of the squared deviation
    are dropped, largest-first to minimize and smallest-first to maximize the
    subset's mean square, and the worse excursion from the top eigenvalue is
    kept.
    """
    if n_directions < 1:
        raise ValueError(f"n_directions must be >= 1, got {n_directions}")
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    m = int(math.floor(eps * s.n))
    if m >= s.n:
        raise ValueError(f"floor(eps*n) = {m} leaves no subset of {s.n} samples")
    rng = rng if rng is not None else RngStream(0)

    lam = _top_eigenvalue(s, rng)
    center = s.data - s.data.mean(axis=0)

    max_mean_dev = 0.0
    max_var_dev = 0.0
    worst_mean_v = np.zeros(s.d)
    worst_var_v = np.zeros(s.d)
    for _ in range(n_directions):
        g = rng.normal(s.d)
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            continue
        v = g / norm
        proj = np.sort(center @ v)
        low, high = _extremes_dropped_means(proj, m)
        mean_dev = max(abs(low), abs(high))
        if mean_dev > max_mean_dev:
            max_mean_dev = mean_dev
            worst_mean_v = v
        sq = np.sort(proj * proj)
        sq_min, sq_max = _extremes_dropped_means(sq, m)
        var_dev = max(abs(sq_min - lam), abs(sq_max - lam))
        if var_dev > max_var_dev:
            max_var_dev = var_dev
            worst_var_v = v

    var_bound = math.inf if eps == 0.0 else delta * delta / eps
    holds = max_mean_dev <= delta and max_var_dev <= var_bound
    return StabilityReport(
        eps=eps,
        delta=delta,
        max_mean_dev=max_mean_dev,
        max_var_dev=max_var_dev,
        directions_tested=n_directions,
        holds=holds,
        worst_mean_direction=worst_mean_v,
        worst_var_direction=worst_var_v,
    )
