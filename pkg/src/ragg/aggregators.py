"""Robust mean aggregators built on iterative spectral filtering.

Four strong aggregators share one filtering loop and differ in how the
dominant eigenpair is obtained and when the loop stops:

* filter_threshold: exact-grade eigenpairs in the full space, stopping when
  the dominant eigenvalue falls below a caller-supplied threshold gamma.
* filter_convergence: exact-grade eigenpairs, stopping when successive
  dominant eigenvalues agree to a relative tolerance, the survivor count hits
  the (1 - 5*eps)*n floor, or the iteration cap is reached.
* rand_eigen: a single random projection to k = ceil(ln(d)/eps_jl^2) dims,
  then per-iteration power iteration in k-space with the same stopping rules;
  removal decisions made in k-space are mirrored to the original rows.
* filter_chunked: the prior practical workaround; dimensions are split into
  disjoint chunks and each chunk is threshold-filtered independently with a
  dense per-chunk covariance, which is what gives it its C^2 per-chunk cost.

Weak baselines (coordinate median, trimmed mean) live here too.

Every aggregator consumes randomness in a documented order so reports are
reproducible from (input, config, seed): the JL matrix entries first (row
major, rand_eigen only), then per filtering iteration the eigensolver start
vector followed by one uniform per surviving row, in ascending row order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import jl
from .numeric import (
    EmptySampleSet,
    RngStream,
    SampleSet,
    covariance,
    dominant_eigen,
    mean,
    power_iteration,
)

STOP_MAX_ITERATIONS = "MaxIterations"
STOP_EIGENVALUE_CONVERGED = "EigenvalueConverged"
STOP_SAMPLE_FLOOR = "SampleFloor"
STOP_BELOW_THRESHOLD = "BelowThreshold"
STOP_DEGENERATE = "Degenerate"

STOP_REASONS = frozenset(
    {
        STOP_MAX_ITERATIONS,
        STOP_EIGENVALUE_CONVERGED,
        STOP_SAMPLE_FLOOR,
        STOP_BELOW_THRESHOLD,
        STOP_DEGENERATE,
    }
)

WARN_PROJECTION_NOT_REDUCING = "projection dimension k >= n"

_SCHEDULER_MIN_DROP = 1e-3
_EXACT_RESIDUAL = 1e-8


class AllSamplesRemoved(RuntimeError):
    """Filtering removed every sample; no survivor mean exists."""


@dataclass(frozen=True)
class FilterConfig:
    """Knobs shared by the filtering aggregators.

    epsilon is the assumed corruption fraction. epsilon = 0 is the
    no-adversary contract: the iteration cap becomes 0 and the plain mean is
    returned untouched. gamma is only consulted by filter_threshold;
    chunk_size only by filter_chunked. When scheduler_enabled, rand_eigen
    starts its power iterations at the usual eps_p error rate and loosens it
    as the eigenvalue trace flattens (dividing by the relative drop, capped
    at scheduler_eps_p0): once the spectrum stops moving, a precise
    eigensolve buys nothing, so later passes get cheaper and the total
    eigensolver step count never exceeds the fixed-eps_p run's.
    """

    epsilon: float
    eps_jl: float = 0.1
    eps_p: float = 0.1
    convergence_tol: float = 1e-5
    scheduler_enabled: bool = False
    scheduler_eps_p0: float = 0.5
    gamma: Optional[float] = None
    gamma_multiplier: float = 9.0
    chunk_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= (1.0 / 3.0) + 1e-12:
            raise ValueError(f"epsilon must be in [0, 1/3], got {self.epsilon}")
        if not 0.0 < self.eps_jl < 1.0:
            raise ValueError(f"eps_jl must be in (0, 1), got {self.eps_jl}")
        if not 0.0 < self.eps_p < 1.0:
            raise ValueError(f"eps_p must be in (0, 1), got {self.eps_p}")
        if not 0.0 < self.scheduler_eps_p0 < 1.0:
            raise ValueError(
                f"scheduler_eps_p0 must be in (0, 1), got {self.scheduler_eps_p0}"
            )
        if self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive")
        if self.gamma is not None and self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.gamma_multiplier <= 0.0:
            raise ValueError("gamma_multiplier must be positive")
        if self.chunk_size is not None and self.chunk_size < 2:
            raise ValueError(f"chunk_size must be >= 2, got {self.chunk_size}")


@dataclass(frozen=True)
class AggregationReport:
    """Robust mean plus the full trace of the filtering run.

    iterations counts completed removal passes; eigenvalue_trace holds every
    dominant eigenvalue computed (one more than iterations when the run
    stopped at a pre-removal check). removed_per_iteration holds original row
    indices, disjoint across entries. power_iterations_total sums the
    eigensolver steps across the run, which is what the scheduler reduces.
    """

    robust_mean: np.ndarray
    iterations: int
    eigenvalue_trace: Tuple[float, ...]
    removed_per_iteration: Tuple[np.ndarray, ...]
    stop_reason: str
    samples_remaining: int
    warnings: Tuple[str, ...] = ()
    power_iterations_total: int = 0
    chunk_reports: Tuple["AggregationReport", ...] = field(default=(), repr=False)

    @property
    def removed_indices(self) -> np.ndarray:
        """All removed original row indices, in removal order."""
        if not self.removed_per_iteration:
            return np.empty(0, dtype=np.intp)
        return np.concatenate(self.removed_per_iteration)


def iteration_cap(n: int, epsilon: float) -> int:
    return math.ceil(2.0 * n * epsilon)


def sample_floor(n: int, epsilon: float) -> int:
    return math.floor((1.0 - 5.0 * epsilon) * n)


def threshold_gamma(clean_cov_norm: float, multiplier: float = 9.0) -> float:
    """Stopping threshold as a multiple of the clean spectral norm."""
    return multiplier * clean_cov_norm


def bias_bound(epsilon: float, clean_cov_norm: float) -> float:
    """Worst-case bias sqrt(20)*(2/eps + 2)*sqrt(clean spectral norm) that the
    strong aggregators are tested against."""
    if epsilon <= 0.0:
        raise ValueError("the bias bound needs epsilon > 0")
    return math.sqrt(20.0) * (2.0 / epsilon + 2.0) * math.sqrt(max(clean_cov_norm, 0.0))


def removal_probabilities(
    projections: np.ndarray, mean_projection: float
) -> Tuple[np.ndarray, bool]:
    """Per-sample removal probabilities |proj_i - mean_proj| / max deviation.

    Returns (probabilities, degenerate). The entry attaining the maximum
    deviation is exactly 1 (ties all normalize to 1; the argmax is the lowest
    such index). When every projection coincides with the mean the direction
    carries no spread: probabilities are all zero and degenerate is True.
    """
    proj = np.asarray(projections, dtype=np.float64)
    if proj.ndim != 1 or proj.size < 1:
        raise ValueError("projections must be a non-empty 1-D array")
    dev = np.abs(proj - float(mean_projection))
    top = float(dev.max())
    if top == 0.0:
        return np.zeros_like(dev), True
    return dev / top, False


def _matrixfree_eigen(sub: np.ndarray, rng: RngStream):
    # centered rows are reused across all matvecs of one eigendecomposition
    centered = sub - sub.mean(axis=0)
    m = sub.shape[0]

    def matvec(v: np.ndarray) -> np.ndarray:
        return centered.T @ (centered @ v) / m

    return dominant_eigen(
        matvec, sub.shape[1], rng, residual_tol=_EXACT_RESIDUAL, max_iters=10 * sub.shape[1]
    )


def _chunk_covariance(sub: np.ndarray) -> np.ndarray:
    # Order-explicit contraction instead of the BLAS product: the summation
    # order is pinned (bit-stable across BLAS builds) and the baseline's
    # n*C^2 arithmetic is not masked by memory-optimal kernels. The strong
    # aggregators keep the fast covariance path; this one is the reference
    # baseline and is costed per chunk, not per call.
    centered = sub - sub.mean(axis=0)
    cov = np.einsum("ni,nj->ij", centered, centered, optimize=False) / sub.shape[0]
    return (cov + cov.T) / 2.0


def _dense_eigen(sub: np.ndarray, rng: RngStream):
    cov = _chunk_covariance(sub)
    return dominant_eigen(
        lambda v: cov @ v,
        sub.shape[1],
        rng,
        residual_tol=_EXACT_RESIDUAL,
        max_iters=10 * sub.shape[1],
    )


def _filter_core(
    x_rows: np.ndarray,
    work_rows: np.ndarray,
    cfg: FilterConfig,
    rng: RngStream,
    mode: str,
    warnings: Tuple[str, ...] = (),
) -> AggregationReport:
    """Shared filtering loop. mode is one of 'threshold', 'threshold_dense',
    'convergence', 'randeigen'; decisions run on work_rows, the returned mean
    on x_rows."""
    n = x_rows.shape[0]
    k = work_rows.shape[1]
    cap = iteration_cap(n, cfg.epsilon)
    floor = sample_floor(n, cfg.epsilon)
    thresholded = mode in ("threshold", "threshold_dense")

    alive = np.arange(n)
    trace: list = []
    removed: list = []
    passes = 0
    power_total = 0
    lam_prev = 0.0
    eps_p_cur = cfg.eps_p
    stop = STOP_MAX_ITERATIONS

    for j in range(1, cap + 1):
        # before anything is removed the subset is the whole set; skip the copy
        sub = work_rows if alive.size == n else work_rows[alive]
        if mode == "randeigen":
            cov = covariance(sub)
            est = power_iteration(lambda v: cov @ v, k, eps_p=eps_p_cur, rng=rng)
        elif mode == "threshold_dense":
            est = _dense_eigen(sub, rng)
        else:
            est = _matrixfree_eigen(sub, rng)
        power_total += est.iterations_used
        lam = est.eigenvalue
        trace.append(lam)

        if est.degenerate:
            stop = STOP_DEGENERATE
            break
        if thresholded:
            if lam < cfg.gamma:
                stop = STOP_BELOW_THRESHOLD
                break
        else:
            if j > 1 and abs(lam - lam_prev) <= cfg.convergence_tol * abs(lam_prev):
                stop = STOP_EIGENVALUE_CONVERGED
                break
            if cfg.scheduler_enabled and j > 1:
                # a flat trace means precision is wasted; loosen inversely to
                # the drop, never past scheduler_eps_p0, never below eps_p
                drop = 1.0 - lam / lam_prev
                eps_p_cur = min(
                    max(cfg.scheduler_eps_p0, cfg.eps_p),
                    eps_p_cur / max(drop, _SCHEDULER_MIN_DROP),
                )
            lam_prev = lam
            if alive.size <= floor:
                stop = STOP_SAMPLE_FLOOR
                break

        proj = sub @ est.eigenvector
        mu_proj = float(sub.mean(axis=0) @ est.eigenvector)
        probs, degenerate = removal_probabilities(proj, mu_proj)
        if degenerate:
            stop = STOP_DEGENERATE
            break
        coins = rng.uniform(alive.size)
        remove = coins < probs
        if bool(remove.all()):
            # Below eps = 0.2 the (1 - 5*eps)*n floor is 0 and the endgame on a
            # handful of survivors would otherwise wipe the set (at two
            # survivors both deviations tie at the max, so both coins hit).
            # Keeping the lowest-probability sample lets the run end in the
            # degenerate single-survivor state instead of erroring out.
            remove[int(np.argmin(probs))] = False
        removed.append(alive[remove])
        alive = alive[~remove]
        passes += 1
        if alive.size == 0:
            raise AllSamplesRemoved("filtering removed every sample")

    return AggregationReport(
        robust_mean=x_rows[alive].mean(axis=0),
        iterations=passes,
        eigenvalue_trace=tuple(trace),
        removed_per_iteration=tuple(removed),
        stop_reason=stop,
        samples_remaining=int(alive.size),
        warnings=warnings,
        power_iterations_total=power_total,
    )


def _plain_mean_report(x: SampleSet, warnings: Tuple[str, ...] = ()) -> AggregationReport:
    return AggregationReport(
        robust_mean=mean(x),
        iterations=0,
        eigenvalue_trace=(),
        removed_per_iteration=(),
        stop_reason=STOP_MAX_ITERATIONS,
        samples_remaining=x.n,
        warnings=warnings,
    )


def filter_threshold(
    x: SampleSet, cfg: FilterConfig, rng: Optional[RngStream] = None
) -> AggregationReport:
    """Iterative filtering that stops once the dominant eigenvalue of the
    survivors' covariance drops below cfg.gamma.

    Eigenpairs are exact-grade (matrix-free power iteration to residual 1e-8)
    in the full space. Per iteration the stream supplies d normals for the
    eigensolver start, then one uniform per survivor.
    """
    if cfg.gamma is None:
        raise ValueError("filter_threshold needs cfg.gamma")
    if rng is None:
        rng = RngStream(cfg.seed)
    if iteration_cap(x.n, cfg.epsilon) == 0:
        return _plain_mean_report(x)
    return _filter_core(x.data, x.data, cfg, rng, "threshold")


def filter_convergence(
    x: SampleSet, cfg: FilterConfig, rng: Optional[RngStream] = None
) -> AggregationReport:
    """Iterative filtering stopped by eigenvalue convergence, the sample
    floor, or the iteration cap, with exact-grade full-space eigenpairs.

    Same draw order as filter_threshold.
    """
    if rng is None:
        rng = RngStream(cfg.seed)
    if iteration_cap(x.n, cfg.epsilon) == 0:
        return _plain_mean_report(x)
    return _filter_core(x.data, x.data, cfg, rng, "convergence")


def rand_eigen(
    x: SampleSet, cfg: FilterConfig, rng: Optional[RngStream] = None
) -> AggregationReport:
    """Quasi-linear strong aggregation: project once to k dimensions, filter
    there, average the surviving original rows.

    The input is centered at its mean before projection (covariances and
    removal probabilities are unchanged by the shift; it only keeps k-space
    magnitudes small). Draw order: d*k projection entries row-major, then per
    iteration k normals for the power-iteration start plus one uniform per
    survivor. With epsilon = 0 nothing is projected and no draws occur.
    """
    if x.d < 2:
        raise ValueError(f"rand_eigen needs d >= 2, got d={x.d}")
    if rng is None:
        rng = RngStream(cfg.seed)
    if iteration_cap(x.n, cfg.epsilon) == 0:
        return _plain_mean_report(x)
    k = jl.jl_dim(x.d, cfg.eps_jl)
    warnings = (WARN_PROJECTION_NOT_REDUCING,) if k >= x.n else ()
    y = jl.project_rows(x.data - x.data.mean(axis=0), k, rng)
    return _filter_core(x.data, y, cfg, rng, "randeigen", warnings=warnings)


def filter_chunked(
    x: SampleSet,
    cfg: FilterConfig,
    rng: Optional[RngStream] = None,
    chunk_clean_norms: Optional[Sequence[float]] = None,
) -> AggregationReport:
    """Chunked threshold filtering: the historical workaround of running the
    threshold filter independently on disjoint blocks of chunk_size dims.

    Each chunk forms its dense covariance (the nC^2 per-chunk cost this
    baseline is known for) and gets gamma = gamma_multiplier times its clean
    spectral norm; pass chunk_clean_norms when the clean statistics are known,
    otherwise each chunk's own spectral norm is used. Chunks consume
    independent derived streams (rng.derive(chunk index)), so results do not
    depend on chunk execution order. The top-level report concatenates the
    per-chunk means; per-chunk traces are kept in chunk_reports.
    """
    if cfg.chunk_size is None:
        raise ValueError("filter_chunked needs cfg.chunk_size")
    if rng is None:
        rng = RngStream(cfg.seed)
    c = cfg.chunk_size
    n_chunks = math.ceil(x.d / c)
    if chunk_clean_norms is not None and len(chunk_clean_norms) != n_chunks:
        raise ValueError(
            f"chunk_clean_norms has {len(chunk_clean_norms)} entries, need {n_chunks}"
        )
    if iteration_cap(x.n, cfg.epsilon) == 0:
        return _plain_mean_report(x)

    parts = []
    reports = []
    for i in range(n_chunks):
        # one contiguous copy; strided column views slow every pass over the chunk
        cols = np.ascontiguousarray(x.data[:, i * c : min((i + 1) * c, x.d)])
        chunk_rng = rng.derive(i)
        if chunk_clean_norms is not None:
            norm = float(chunk_clean_norms[i])
        else:
            norm = _dense_eigen(cols, chunk_rng).eigenvalue
        gamma = threshold_gamma(norm, cfg.gamma_multiplier)
        if gamma <= 0.0:
            # a zero-variance chunk has nothing to filter
            reports.append(_plain_mean_report(SampleSet(cols)))
        else:
            chunk_cfg = replace(cfg, gamma=gamma)
            reports.append(_filter_core(cols, cols, chunk_cfg, chunk_rng, "threshold_dense"))
        parts.append(reports[-1].robust_mean)

    longest = max(reports, key=lambda r: r.iterations)
    return AggregationReport(
        robust_mean=np.concatenate(parts),
        iterations=longest.iterations,
        eigenvalue_trace=longest.eigenvalue_trace,
        removed_per_iteration=(),
        stop_reason=longest.stop_reason,
        samples_remaining=min(r.samples_remaining for r in reports),
        power_iterations_total=sum(r.power_iterations_total for r in reports),
        chunk_reports=tuple(reports),
    )


def aggregate_weak(
    x: Union[SampleSet, np.ndarray], method: str, trim_fraction: float = 0.0
) -> np.ndarray:
    """Dimension-wise baseline aggregators.

    method is one of 'ArithmeticMean', 'CoordinateMedian', 'TrimmedMean';
    trim_fraction (in [0, 0.5)) applies to TrimmedMean only and drops
    floor(trim_fraction * n) values from each end per dimension.
    """
    rows = x.data if isinstance(x, SampleSet) else np.asarray(x, dtype=np.float64)
    if rows.shape[0] == 0:
        raise EmptySampleSet("aggregation of an empty sample set")
    if method == "ArithmeticMean":
        return mean(rows)
    if method == "CoordinateMedian":
        return np.median(rows, axis=0)
    if method == "TrimmedMean":
        if not 0.0 <= trim_fraction < 0.5:
            raise ValueError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")
        n = rows.shape[0]
        cut = math.floor(trim_fraction * n)
        if n - 2 * cut < 1:
            raise ValueError("trim_fraction leaves no samples")
        return np.sort(rows, axis=0)[cut : n - cut].mean(axis=0)
    raise ValueError(f"unknown weak aggregation method {method!r}")
