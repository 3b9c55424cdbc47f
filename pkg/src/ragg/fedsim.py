"""Miniature federated averaging with real gradients and malicious clients.

The task is binary logistic regression on synthetic data: features are
standard normal in d dimensions, kept only when they clear a margin around a
seeded ground-truth hyperplane, with a small fraction of labels flipped.
Every round each honest client computes a batch gradient on its shard,
malicious clients fabricate gradients from the honest clients' gradient
statistics (the omniscient adversary), the server aggregates with a pluggable
aggregator and applies either a plain SGD step or the Adam recursion
m_t = b1*m + (1-b1)*g, v_t = b2*v + (1-b2)*g^2, w -= lr * m / (tau + sqrt(v)),
with m_0 = g and v_0 = g^2 on the first step.

Randomness is a fixed tree: stream 0 of the run seed builds the task, stream
r+1 drives round r (batch choice, then attack draws, then aggregator draws),
so a run is reproducible from (config, seed) and rounds never interact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .aggregators import (
    AggregationReport,
    FilterConfig,
    aggregate_weak,
    filter_chunked,
    filter_convergence,
    filter_threshold,
    rand_eigen,
    threshold_gamma,
)
from .attacks import (
    STRATEGY_ADAPTIVE_BELOW_THRESHOLD,
    STRATEGY_COORDINATE_SHIFT,
    STRATEGY_LARGE_OUTLIER,
    STRATEGY_ORTHOGONAL_ROUNDS,
    AttackSpec,
    ThresholdBelowBenignVariance,
)
from .numeric import RngStream, SampleSet, covariance, dominant_eigen

OPTIMIZER_SGD = "SGD"
OPTIMIZER_ADAM = "Adam"
OPTIMIZERS = frozenset({OPTIMIZER_SGD, OPTIMIZER_ADAM})

AGGREGATOR_MEAN = "Mean"
AGGREGATOR_COORDINATE_MEDIAN = "CoordinateMedian"
AGGREGATOR_TRIMMED_MEAN = "TrimmedMean"
AGGREGATOR_FILTER_THRESHOLD = "FilterThreshold"
AGGREGATOR_FILTER_CONVERGENCE = "FilterConvergence"
AGGREGATOR_RAND_EIGEN = "RandEigen"
AGGREGATOR_CHUNKED = "Chunked"
AGGREGATORS = frozenset(
    {
        AGGREGATOR_MEAN,
        AGGREGATOR_COORDINATE_MEDIAN,
        AGGREGATOR_TRIMMED_MEAN,
        AGGREGATOR_FILTER_THRESHOLD,
        AGGREGATOR_FILTER_CONVERGENCE,
        AGGREGATOR_RAND_EIGEN,
        AGGREGATOR_CHUNKED,
    }
)

_REJECTION_BLOCK = 4096


class FedRoundError(RuntimeError):
    """Aggregation failed during a round; carries the round index."""

    def __init__(self, round_index: int, cause: BaseException) -> None:
        super().__init__(f"aggregation failed in round {round_index}: {cause}")
        self.round_index = round_index


@dataclass(frozen=True)
class FedConfig:
    n_clients: int = 20
    eps: float = 0.0
    rounds: int = 100
    learning_rate: float = 0.5
    batch_size: int = 0
    optimizer: str = OPTIMIZER_SGD
    beta1: float = 0.9
    beta2: float = 0.999
    tau_adapt: float = 1e-8
    aggregator: str = AGGREGATOR_MEAN
    filter: FilterConfig = field(default_factory=lambda: FilterConfig(epsilon=0.0))
    trim_fraction: float = 0.1
    attack: Optional[AttackSpec] = None
    d: int = 32
    samples_per_client: int = 200
    heldout_size: int = 2000
    margin: float = 2.0
    label_noise: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not 0.0 <= self.eps <= 1.0 / 3.0 + 1e-12:
            raise ValueError(f"eps must be in [0, 1/3], got {self.eps}")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0 (0 = full shard)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.samples_per_client < 1:
            raise ValueError("samples_per_client must be >= 1")
        if self.heldout_size < 1:
            raise ValueError("heldout_size must be >= 1")
        if self.margin < 0.0:
            raise ValueError("margin must be >= 0")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if self.n_malicious > 0 and self.attack is None:
            raise ValueError("eps > 0 requires an attack spec")

    @property
    def n_malicious(self) -> int:
        return int(math.floor(self.n_clients * self.eps))


@dataclass(frozen=True)
class FedTask:
    shards_x: np.ndarray
    shards_y: np.ndarray
    heldout_x: np.ndarray
    heldout_y: np.ndarray
    true_weights: np.ndarray


@dataclass(frozen=True)
class RoundTrace:
    round_index: int
    bias: float
    loss: float
    accuracy: float
    aggregator_iterations: int
    samples_remaining: int
    stop_reason: Optional[str]


@dataclass
class FedState:
    weights: np.ndarray
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    t: int = 0


def make_task(cfg: FedConfig) -> FedTask:
    """Deterministic shards, held-out set, and ground-truth weights.

    Features are rejection-sampled standard normals with |x . w*| >= margin,
    accepted in draw order so the construction is reproducible; labels are
    sign(x . w*) with label_noise of them flipped.
    """
    rng = RngStream(cfg.seed).derive(0)
    d = cfg.d
    w_star = rng.normal(d)
    w_star = w_star / float(np.linalg.norm(w_star))
    total = cfg.n_clients * cfg.samples_per_client + cfg.heldout_size
    rows = []
    collected = 0
    while collected < total:
        block = rng.normal(_REJECTION_BLOCK * d).reshape(_REJECTION_BLOCK, d)
        keep = np.abs(block @ w_star) >= cfg.margin
        accepted = block[keep]
        rows.append(accepted)
        collected += accepted.shape[0]
    x = np.concatenate(rows, axis=0)[:total]
    y = np.where(x @ w_star >= 0.0, 1.0, -1.0)
    flips = rng.uniform(total) < cfg.label_noise
    y = np.where(flips, -y, y)
    split = cfg.n_clients * cfg.samples_per_client
    shards_x = x[:split].reshape(cfg.n_clients, cfg.samples_per_client, d)
    shards_y = y[:split].reshape(cfg.n_clients, cfg.samples_per_client)
    return FedTask(
        shards_x=shards_x,
        shards_y=shards_y,
        heldout_x=x[split:],
        heldout_y=y[split:],
        true_weights=w_star,
    )


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_gradient(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # d/dw mean log(1 + exp(-y x.w)) = mean(-y sigmoid(-y x.w) x)
    margins = y * (x @ w)
    coef = -y * _sigmoid(-margins)
    return (coef[:, None] * x).mean(axis=0)


def evaluate(task: FedTask, weights: np.ndarray) -> Tuple[float, float]:
    """(held-out logistic loss, held-out accuracy) of a weight vector."""
    scores = task.heldout_x @ weights
    margins = task.heldout_y * scores
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    pred = np.where(scores >= 0.0, 1.0, -1.0)
    accuracy = float(np.mean(pred == task.heldout_y))
    return loss, accuracy


def _honest_gradients(
    state: FedState, cfg: FedConfig, task: FedTask, batch_rng: RngStream
) -> np.ndarray:
    n_mal = cfg.n_malicious
    per = cfg.samples_per_client
    grads = []
    for c in range(n_mal, cfg.n_clients):
        xs = task.shards_x[c]
        ys = task.shards_y[c]
        if 0 < cfg.batch_size < per:
            order = np.argsort(batch_rng.uniform(per), kind="stable")
            take = order[: cfg.batch_size]
            xs, ys = xs[take], ys[take]
        grads.append(_logistic_gradient(xs, ys, state.weights))
    return np.asarray(grads)


def _attack_rows(
    spec: AttackSpec,
    n_mal: int,
    n_clients: int,
    honest: np.ndarray,
    rng: RngStream,
) -> np.ndarray:
    """Fabricated gradients from honest statistics, one row per bad client.

    The round rng only seeds the eigensolve of the honest statistics; the
    strategy's direction and sign draws come from the attack's own seed, so
    the adversary presses the same direction every round while rescaling to
    that round's honest spread. A fresh direction per round would average
    itself out of the weight trajectory and understate the attack.
    """
    d = honest.shape[1]
    mu = honest.mean(axis=0)
    cov = covariance(SampleSet(honest)) if honest.shape[0] > 1 else np.zeros((d, d))
    est = dominant_eigen(lambda v: cov @ v, d, rng)
    lam = max(est.eigenvalue, 0.0)
    dir_rng = RngStream(spec.seed)
    rows = np.empty((n_mal, d))
    if spec.strategy == STRATEGY_LARGE_OUTLIER:
        v = dir_rng.normal(d)
        v /= float(np.linalg.norm(v))
        rows[:] = mu + spec.magnitude * math.sqrt(lam) * v
    elif spec.strategy == STRATEGY_ADAPTIVE_BELOW_THRESHOLD:
        gamma = spec.gamma_target if spec.gamma_target is not None else 9.0 * lam
        if gamma <= lam:
            raise ThresholdBelowBenignVariance(
                f"gamma_target {gamma} must exceed the honest gradient variance {lam}"
            )
        b = math.sqrt((gamma - lam) / (n_mal / n_clients))
        v = dir_rng.normal(d)
        v /= float(np.linalg.norm(v))
        rows[:] = mu + b * v
    elif spec.strategy == STRATEGY_ORTHOGONAL_ROUNDS:
        g = dir_rng.normal(d * spec.rounds).reshape(d, spec.rounds)
        q, r = np.linalg.qr(g)
        q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
        scale = spec.magnitude * math.sqrt(lam)
        for j in range(spec.rounds):
            rows[j :: spec.rounds] = mu + scale * q[:, j]
    elif spec.strategy == STRATEGY_COORDINATE_SHIFT:
        sigma = honest.std(axis=0)
        signs = np.where(dir_rng.uniform(d) < 0.5, 1.0, -1.0)
        rows[:] = mu + spec.shift * sigma * signs
    else:
        raise ValueError(f"unknown attack strategy {spec.strategy!r}")
    return rows


def _aggregate(
    x: np.ndarray, cfg: FedConfig, rng: RngStream
) -> Tuple[np.ndarray, Optional[AggregationReport]]:
    s = SampleSet(x)
    if cfg.aggregator == AGGREGATOR_MEAN:
        return x.mean(axis=0), None
    if cfg.aggregator == AGGREGATOR_COORDINATE_MEDIAN:
        return aggregate_weak(s, "CoordinateMedian"), None
    if cfg.aggregator == AGGREGATOR_TRIMMED_MEAN:
        return aggregate_weak(s, "TrimmedMean", cfg.trim_fraction), None
    fcfg = cfg.filter
    if cfg.aggregator == AGGREGATOR_FILTER_THRESHOLD:
        if fcfg.gamma is None:
            # Defender's view: threshold from the current round's own top
            # eigenvalue estimate (it has no oracle access to clean variance).
            cov = covariance(s)
            est = dominant_eigen(lambda v: cov @ v, s.d, rng)
            fcfg = replace(
                fcfg, gamma=threshold_gamma(max(est.eigenvalue, 0.0), fcfg.gamma_multiplier)
            )
        report = filter_threshold(s, fcfg, rng)
    elif cfg.aggregator == AGGREGATOR_FILTER_CONVERGENCE:
        report = filter_convergence(s, fcfg, rng)
    elif cfg.aggregator == AGGREGATOR_RAND_EIGEN:
        report = rand_eigen(s, fcfg, rng)
    else:
        report = filter_chunked(s, fcfg, rng)
    return report.robust_mean, report


def run_round(
    state: FedState,
    cfg: FedConfig,
    task: FedTask,
    rng: RngStream,
    round_index: int,
) -> Tuple[FedState, RoundTrace]:
    honest = _honest_gradients(state, cfg, task, rng.derive(0))
    n_mal = cfg.n_malicious
    try:
        if n_mal:
            bad = _attack_rows(cfg.attack, n_mal, cfg.n_clients, honest, rng.derive(1))
            x = np.concatenate([bad, honest], axis=0)
        else:
            x = honest
        aggregate, report = _aggregate(x, cfg, rng.derive(2))
    except Exception as exc:
        raise FedRoundError(round_index, exc) from exc

    honest_mean = honest.mean(axis=0)
    bias = float(np.linalg.norm(aggregate - honest_mean))

    w = state.weights
    if cfg.optimizer == OPTIMIZER_SGD:
        new_state = FedState(w - cfg.learning_rate * aggregate, None, None, state.t + 1)
    else:
        if state.t == 0:
            m = aggregate.copy()
            v = aggregate * aggregate
        else:
            m = cfg.beta1 * state.adam_m + (1.0 - cfg.beta1) * aggregate
            v = cfg.beta2 * state.adam_v + (1.0 - cfg.beta2) * aggregate * aggregate
        step = cfg.learning_rate * m / (cfg.tau_adapt + np.sqrt(v))
        new_state = FedState(w - step, m, v, state.t + 1)

    loss, accuracy = evaluate(task, new_state.weights)
    trace = RoundTrace(
        round_index=round_index,
        bias=bias,
        loss=loss,
        accuracy=accuracy,
        aggregator_iterations=report.iterations if report is not None else 0,
        samples_remaining=report.samples_remaining
        if report is not None
        else x.shape[0],
        stop_reason=report.stop_reason if report is not None else None,
    )
    return new_state, trace


def run(cfg: FedConfig) -> Tuple[FedState, Tuple[RoundTrace, ...]]:
    """Full federated run; reproducible from cfg alone."""
    task = make_task(cfg)
    state = FedState(np.zeros(cfg.d))
    traces = []
    base = RngStream(cfg.seed)
    for r in range(cfg.rounds):
        state, trace = run_round(state, cfg, task, base.derive(r + 1), r)
        traces.append(trace)
    return state, tuple(traces)
