"""Seeded corruption generators covering the classic attack geometries.

Each generator replaces floor(n * eps) uniformly chosen rows of a clean
sample set and returns the result together with ground truth: which rows were
replaced, plus the mean and top covariance eigenvalue of the untouched
complement. Evaluation harnesses need those reference statistics to measure
bias and bounds; aggregators under test never see them.

Randomness is consumed in a fixed order per generator: n uniforms to pick the
rows, d normals to start the complement eigensolve, then the strategy's own
direction or sign draws. Same (input, parameters, seed) -> same output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numeric import RngStream, SampleSet, covariance, covariance_matvec, dominant_eigen

STRATEGY_LARGE_OUTLIER = "LargeOutlier"
STRATEGY_ADAPTIVE_BELOW_THRESHOLD = "AdaptiveBelowThreshold"
STRATEGY_ORTHOGONAL_ROUNDS = "OrthogonalRounds"
STRATEGY_COORDINATE_SHIFT = "CoordinateShift"

STRATEGIES = frozenset(
    {
        STRATEGY_LARGE_OUTLIER,
        STRATEGY_ADAPTIVE_BELOW_THRESHOLD,
        STRATEGY_ORTHOGONAL_ROUNDS,
        STRATEGY_COORDINATE_SHIFT,
    }
)

_MAX_EPSILON = 1.0 / 3.0 + 1e-12


class ThresholdBelowBenignVariance(ValueError):
    """The requested threshold target does not exceed the benign variance."""


@dataclass(frozen=True)
class AttackSpec:
    """Serializable description of one corruption run.

    magnitude applies to LargeOutlier and OrthogonalRounds (distance in units
    of sqrt of the clean covariance norm), gamma_target to
    AdaptiveBelowThreshold (None = 9x the measured clean norm, i.e. the
    defender's default threshold rule), rounds to OrthogonalRounds, and shift
    to CoordinateShift (units of per-coordinate std).
    """

    strategy: str
    epsilon: float
    magnitude: float = 50.0
    gamma_target: Optional[float] = None
    rounds: int = 1
    shift: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown attack strategy {self.strategy!r}")
        if not 0.0 <= self.epsilon <= _MAX_EPSILON:
            raise ValueError(f"epsilon must be in [0, 1/3], got {self.epsilon}")


@dataclass(frozen=True)
class CorruptedSet:
    """An eps-corrupted sample set plus the ground truth about it."""

    samples: SampleSet
    corrupted_indices: np.ndarray
    clean_mean: np.ndarray
    clean_cov_norm: float

    @property
    def n_corrupted(self) -> int:
        return int(self.corrupted_indices.size)

    def clean_rows(self) -> np.ndarray:
        mask = np.ones(self.samples.n, dtype=bool)
        mask[self.corrupted_indices] = False
        return self.samples.data[mask]


def corrupted_count(n: int, eps: float) -> int:
    return int(math.floor(n * eps))


def _pick_rows(n: int, m: int, rng: RngStream) -> np.ndarray:
    # Uniform m-subset via the order statistics of n uniforms; stable sort
    # keeps the choice reproducible under ties (probability-zero but cheap).
    order = np.argsort(rng.uniform(n), kind="stable")
    return np.sort(order[:m])


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _complement_stats(
    s: SampleSet, corrupted: np.ndarray, rng: RngStream
) -> tuple[np.ndarray, float]:
    """Mean and top covariance eigenvalue of the non-corrupted rows."""
    mask = np.ones(s.n, dtype=bool)
    mask[corrupted] = False
    rows = s.data[mask]
    clean = SampleSet(rows)
    mu = rows.mean(axis=0)
    # Dense covariance is cheaper per power step whenever d x d fits and is
    # not much wider than the data; fall back to the matrix-free product for
    # very wide sets. Both routes are residual-certified to 1e-8.
    if s.d <= max(2 * clean.n, 1024):
        cov = covariance(clean)
        est = dominant_eigen(lambda v: cov @ v, s.d, rng)
    else:
        est = dominant_eigen(lambda v: covariance_matvec(clean, v), s.d, rng)
    return mu, max(est.eigenvalue, 0.0)


def corrupt_large_outlier(
    s: SampleSet, eps: float, magnitude: float = 50.0, rng: Optional[RngStream] = None
) -> CorruptedSet:
    """Place all corrupted rows at one far point along a random direction.

    The rows land at mu_S + magnitude * sqrt(clean_cov_norm) * v, so the plain
    mean is displaced by about eps * magnitude * sqrt(clean_cov_norm).
    """
    if magnitude <= 0.0:
        raise ValueError(f"magnitude must be positive, got {magnitude}")
    rng = rng if rng is not None else RngStream(0)
    m = corrupted_count(s.n, eps)
    idx = _pick_rows(s.n, m, rng) if m else np.empty(0, dtype=np.intp)
    mu, lam = _complement_stats(s, idx, rng)
    if m == 0:
        return CorruptedSet(s, idx, mu, lam)
    v = _unit(rng.normal(s.d))
    data = s.data.copy()
    data[idx] = mu + magnitude * math.sqrt(lam) * v
    return CorruptedSet(SampleSet(data), idx, mu, lam)


def corrupt_adaptive_below_threshold(
    s: SampleSet,
    eps: float,
    gamma_target: Optional[float] = None,
    rng: Optional[RngStream] = None,
) -> CorruptedSet:
    """Maximize bias while keeping the top eigenvalue under a threshold.

    Corrupted rows sit at mu_S + b * v with b = sqrt((gamma_target -
    clean_cov_norm) / eps'), the largest single-direction budget that leaves
    the corrupted set's top eigenvalue at or below gamma_target. A threshold
    defense configured with that gamma never starts filtering, so it eats the
    full eps' * b bias.
    """
    rng = rng if rng is not None else RngStream(0)
    m = corrupted_count(s.n, eps)
    idx = _pick_rows(s.n, m, rng) if m else np.empty(0, dtype=np.intp)
    mu, lam = _complement_stats(s, idx, rng)
    if gamma_target is None:
        gamma_target = 9.0 * lam
    if gamma_target <= lam:
        raise ThresholdBelowBenignVariance(
            f"gamma_target {gamma_target} must exceed the clean covariance norm {lam}"
        )
    if m == 0:
        return CorruptedSet(s, idx, mu, lam)
    eps_prime = m / s.n
    b = math.sqrt((gamma_target - lam) / eps_prime)
    v = _unit(rng.normal(s.d))
    data = s.data.copy()
    data[idx] = mu + b * v
    return CorruptedSet(SampleSet(data), idx, mu, lam)


def corrupt_orthogonal_rounds(
    s: SampleSet,
    eps: float,
    rounds: int = 1,
    magnitude: float = 50.0,
    rng: Optional[RngStream] = None,
) -> CorruptedSet:
    """Split the corrupted rows across mutually orthonormal directions.

    Cohort j sits at mu_S + magnitude * sqrt(clean_cov_norm) * v_j; cohort
    sizes differ by at most one. Each direction forces the filter to spend a
    fresh eigenvector recomputation, which is the point of the attack.
    """
    if magnitude <= 0.0:
        raise ValueError(f"magnitude must be positive, got {magnitude}")
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if rounds > s.d:
        raise ValueError(f"rounds {rounds} exceeds dimension {s.d}")
    rng = rng if rng is not None else RngStream(0)
    m = corrupted_count(s.n, eps)
    idx = _pick_rows(s.n, m, rng) if m else np.empty(0, dtype=np.intp)
    mu, lam = _complement_stats(s, idx, rng)
    if m == 0:
        return CorruptedSet(s, idx, mu, lam)
    g = rng.normal(s.d * rounds).reshape(s.d, rounds)
    q, r = np.linalg.qr(g)
    # Sign-fix the factorization so the directions are a deterministic
    # function of the Gaussian block.
    q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    scale = magnitude * math.sqrt(lam)
    data = s.data.copy()
    for j in range(rounds):
        cohort = idx[j::rounds]
        if cohort.size:
            data[cohort] = mu + scale * q[:, j]
    return CorruptedSet(SampleSet(data), idx, mu, lam)


def corrupt_coordinate_shift(
    s: SampleSet, eps: float, shift: float = 3.0, rng: Optional[RngStream] = None
) -> CorruptedSet:
    """Shift every coordinate by a few per-coordinate stds with random signs.

    No single coordinate looks extreme, which is what defeats coordinate-wise
    defenses, yet the total displacement grows with sqrt(d).
    """
    if shift <= 0.0:
        raise ValueError(f"shift must be positive, got {shift}")
    rng = rng if rng is not None else RngStream(0)
    m = corrupted_count(s.n, eps)
    idx = _pick_rows(s.n, m, rng) if m else np.empty(0, dtype=np.intp)
    mu, lam = _complement_stats(s, idx, rng)
    if m == 0:
        return CorruptedSet(s, idx, mu, lam)
    mask = np.ones(s.n, dtype=bool)
    mask[idx] = False
    sigma = s.data[mask].std(axis=0)
    signs = np.where(rng.uniform(s.d) < 0.5, 1.0, -1.0)
    data = s.data.copy()
    data[idx] = mu + shift * sigma * signs
    return CorruptedSet(SampleSet(data), idx, mu, lam)


def apply_attack(
    s: SampleSet, spec: AttackSpec, rng: Optional[RngStream] = None
) -> CorruptedSet:
    """Run the generator named by spec.strategy with spec's parameters."""
    rng = rng if rng is not None else RngStream(spec.seed)
    if spec.strategy == STRATEGY_LARGE_OUTLIER:
        return corrupt_large_outlier(s, spec.epsilon, spec.magnitude, rng)
    if spec.strategy == STRATEGY_ADAPTIVE_BELOW_THRESHOLD:
        return corrupt_adaptive_below_threshold(s, spec.epsilon, spec.gamma_target, rng)
    if spec.strategy == STRATEGY_ORTHOGONAL_ROUNDS:
        return corrupt_orthogonal_rounds(s, spec.epsilon, spec.rounds, spec.magnitude, rng)
    if spec.strategy == STRATEGY_COORDINATE_SHIFT:
        return corrupt_coordinate_shift(s, spec.epsilon, spec.shift, rng)
    raise ValueError(f"unknown attack strategy {spec.strategy!r}")
