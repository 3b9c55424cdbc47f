"""Command-line front end: aggregation, benchmarks, harnesses, fedsim.

Subcommands
  aggregate        robust mean of a vector file, report JSON on stdout
  bench-runtime    seeded runtime sweeps with median-of-5 timing and slope fits
  attack-eval      attack x eps x aggregator grid with bias/bound/recall rows
  stability-check  empirical (eps, delta)-stability report for a vector file
  fedsim           federated simulation streaming one JSON line per round

Shared flags: --config (JSON), --input, --output, --seed (overrides the
config seed), --format {csv,bin,json} (payload format where a command writes
a vector file). RAGG_THREADS caps worker parallelism for sweep cells; cells
use derived per-cell seeds, so the thread count never changes results.

Exit codes: 0 success, 2 malformed input file or config, 3 aggregator
failure (including an embedded bias-bound violation in attack-eval), 4 a
benchmark run exceeded its timeout, 5 stability check failed to hold.

Config keys are validated against each command's schema before any
computation; unknown keys are rejected. Numbers in emitted CSV/JSON use the
shortest round-trippable rendering, so re-runs are byte-identical except for
measured wall times in bench-runtime.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import vectorfile
from .aggregators import (
    AggregationReport,
    AllSamplesRemoved,
    FilterConfig,
    aggregate_weak,
    bias_bound,
    filter_chunked,
    filter_convergence,
    filter_threshold,
    rand_eigen,
    threshold_gamma,
)
from .attacks import (
    STRATEGIES,
    AttackSpec,
    ThresholdBelowBenignVariance,
    apply_attack,
)
from .fedsim import (
    FedConfig,
    FedRoundError,
    FedState,
    evaluate,
    make_task,
    run_round,
)
from .numeric import EmptySampleSet, RngStream, SampleSet, covariance, dominant_eigen
from .stability import check_stability, default_delta

EXIT_OK = 0
EXIT_MALFORMED = 2
EXIT_AGGREGATOR = 3
EXIT_BENCH_TIMEOUT = 4
EXIT_STABILITY_VIOLATED = 5

_STRONG_AGGREGATORS = frozenset({"FilterConvergence", "RandEigen"})
_CLI_AGGREGATORS = frozenset(
    {
        "Mean",
        "CoordinateMedian",
        "TrimmedMean",
        "FilterThreshold",
        "FilterConvergence",
        "RandEigen",
        "Chunked",
    }
)

# Clean-data ceiling used for the bound column of eps=0 rows, where the
# worst-case bound is undefined: near-zero filtering should stay within a few
# percent of sqrt of the clean covariance norm.
_CLEAN_BIAS_FACTOR = 0.05

_BENCH_WARMUPS = 2
_BENCH_REPS = 5


class ConfigError(ValueError):
    """The config file violates a command's schema."""


class BenchTimeout(RuntimeError):
    """A single benchmark run exceeded the configured timeout."""


def _err(msg: str) -> None:
    print(f"ragg: {msg}", file=sys.stderr)


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed: frozenset, where: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {', '.join(unknown)}")


def _resolve_seed(args: argparse.Namespace, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return seed


def _worker_threads() -> int:
    raw = os.environ.get("RAGG_THREADS")
    if raw is None:
        return 1
    try:
        threads = int(raw)
    except ValueError as exc:
        raise ConfigError(f"RAGG_THREADS must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigError(f"RAGG_THREADS must be >= 1, got {threads}")
    return threads


_FILTER_KEYS = frozenset(
    {
        "epsilon",
        "eps_jl",
        "eps_p",
        "convergence_tol",
        "scheduler_enabled",
        "scheduler_eps_p0",
        "gamma",
        "gamma_multiplier",
        "chunk_size",
    }
)


def _build_filter_config(cfg: dict, seed: int) -> FilterConfig:
    kwargs = {k: cfg[k] for k in _FILTER_KEYS if k in cfg}
    kwargs.setdefault("epsilon", 0.1)
    try:
        return FilterConfig(seed=seed, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid filter settings: {exc}") from exc


def _estimated_gamma(s: SampleSet, fcfg: FilterConfig, rng: RngStream) -> float:
    # Threshold defenses assume a known variance scale; without one in the
    # config, estimate it from the data the defender actually sees.
    cov = covariance(s)
    est = dominant_eigen(lambda v: cov @ v, s.d, rng)
    return threshold_gamma(max(est.eigenvalue, 0.0), fcfg.gamma_multiplier)


def _run_aggregator(
    name: str,
    s: SampleSet,
    fcfg: FilterConfig,
    rng: RngStream,
    trim_fraction: float = 0.1,
) -> tuple[np.ndarray, Optional[AggregationReport]]:
    if name == "Mean":
        return s.data.mean(axis=0), None
    if name == "CoordinateMedian":
        return aggregate_weak(s, "CoordinateMedian"), None
    if name == "TrimmedMean":
        return aggregate_weak(s, "TrimmedMean", trim_fraction), None
    if name == "FilterThreshold":
        if fcfg.gamma is None:
            fcfg = replace(fcfg, gamma=_estimated_gamma(s, fcfg, rng))
        report = filter_threshold(s, fcfg, rng)
    elif name == "FilterConvergence":
        report = filter_convergence(s, fcfg, rng)
    elif name == "RandEigen":
        report = rand_eigen(s, fcfg, rng)
    elif name == "Chunked":
        report = filter_chunked(s, fcfg, rng)
    else:
        raise ConfigError(f"unknown aggregator {name!r}")
    return report.robust_mean, report


def _json_line(obj: object) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------- aggregate

_AGGREGATE_KEYS = frozenset({"aggregator", "trim_fraction", "seed"}) | _FILTER_KEYS


def cmd_aggregate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _AGGREGATE_KEYS, "aggregate")
    seed = _resolve_seed(args, cfg)
    name = cfg.get("aggregator", "Mean")
    if name not in _CLI_AGGREGATORS:
        raise ConfigError(f"unknown aggregator {name!r}")
    trim = cfg.get("trim_fraction", 0.1)
    fcfg = _build_filter_config(cfg, seed)
    if args.input is None:
        raise ConfigError("aggregate requires --input")

    data = vectorfile.read(args.input)
    s = SampleSet(data)
    vector, report = _run_aggregator(name, s, fcfg, RngStream(seed), trim)

    out = {
        "aggregator": name,
        "n": s.n,
        "d": s.d,
        "seed": seed,
        "robust_mean": [float(v) for v in vector],
    }
    if report is not None:
        out.update(
            {
                "iterations": report.iterations,
                "stop_reason": report.stop_reason,
                "eigenvalue_trace": [float(v) for v in report.eigenvalue_trace],
                "samples_remaining": report.samples_remaining,
                "removed_counts": [int(r.size) for r in report.removed_per_iteration],
                "warnings": list(report.warnings),
            }
        )
    print(_json_line(out))
    if args.output:
        if args.format == "json":
            with open(args.output, "w", encoding="ascii") as fh:
                fh.write(_json_line(out) + "\n")
        else:
            vectorfile.write(args.output, vector.reshape(1, s.d), args.format)
    return EXIT_OK


# ------------------------------------------------------------ bench-runtime

_BENCH_KEYS = frozenset(
    {
        "n",
        "epsilon",
        "eps_jl",
        "eps_p",
        "seed",
        "timeout_s",
        "planted_fraction",
        "planted_shift",
        "randeigen_d_values",
        "chunked_n",
        "chunked_c_values",
        "chunked_d",
        "ratio_d_values",
        "ratio_chunk_size",
        "ratio_eps_jl",
        "ratio_eps_p",
        "ratio_n",
    }
)


def _timed_call(fn: Callable[[], AggregationReport], timeout_s: float):
    for _ in range(_BENCH_WARMUPS):
        t0 = time.perf_counter()
        fn()
        if time.perf_counter() - t0 > timeout_s:
            raise BenchTimeout(f"benchmark run exceeded {timeout_s}s")
    times = []
    result = None
    for _ in range(_BENCH_REPS):
        t0 = time.perf_counter()
        result = fn()
        elapsed = time.perf_counter() - t0
        if elapsed > timeout_s:
            raise BenchTimeout(f"benchmark run exceeded {timeout_s}s")
        times.append(elapsed * 1000.0)
    return statistics.median(times), result


def _bench_data(
    n: int, d: int, seed: int, cell: int, frac: float, shift: float
) -> SampleSet:
    # A planted shift on the leading rows puts a large spectral gap in the
    # data (and in every coordinate chunk of it), so eigensolver work per run
    # stays flat across cells instead of wandering with the spectrum of pure
    # noise. Timing cells measure cost, not estimation quality.
    rng = RngStream(seed).derive(cell)
    data = rng.normal(n * d).reshape(n, d)
    data[: int(n * frac)] += shift
    return SampleSet(data)


def _fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(xs)), np.log(np.asarray(ys)), 1)[0])


def cmd_bench_runtime(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _BENCH_KEYS, "bench-runtime")
    seed = _resolve_seed(args, cfg)
    n = cfg.get("n", 256)
    # A tiny assumed corruption rate keeps the removal-pass cap at one or two
    # passes, so every cell times the same amount of work.
    epsilon = cfg.get("epsilon", 0.005)
    eps_jl = cfg.get("eps_jl", 0.5)
    eps_p = cfg.get("eps_p", 0.1)
    timeout_s = cfg.get("timeout_s", 120.0)
    frac = cfg.get("planted_fraction", 0.1)
    shift = cfg.get("planted_shift", 3.0)
    d_values = cfg.get("randeigen_d_values", [])
    chunked_n = cfg.get("chunked_n", 2000)
    c_values = cfg.get("chunked_c_values", [])
    chunked_d = cfg.get("chunked_d", 1600)
    ratio_d_values = cfg.get("ratio_d_values", [])
    ratio_c = cfg.get("ratio_chunk_size", 200)
    ratio_eps_jl = cfg.get("ratio_eps_jl", 0.5)
    ratio_eps_p = cfg.get("ratio_eps_p", 0.001)
    ratio_n = cfg.get("ratio_n", 64)
    for dv in list(d_values) + list(ratio_d_values) + [chunked_d]:
        if dv < 64:
            raise ConfigError(f"bench dimensions must be >= 64, got {dv}")

    rows: list[tuple] = []
    cell = 0

    def run_randeigen(x: SampleSet, fc: FilterConfig, cell_seed: int):
        return lambda: rand_eigen(x, fc, RngStream(cell_seed))

    def chunk_norms(x: SampleSet, c: int, cell_seed: int) -> list:
        # The threshold baseline assumes the per-chunk variance scale is known
        # ahead of time, so this calibration runs outside the timed region.
        norms = []
        parent = RngStream(cell_seed + 1)
        for i in range(math.ceil(x.d / c)):
            cols = x.data[:, i * c : min((i + 1) * c, x.d)]
            cov = covariance(cols)
            est = dominant_eigen(
                lambda v: cov @ v, cols.shape[1], parent.derive(i)
            )
            norms.append(max(est.eigenvalue, 0.0))
        return norms

    def run_chunked(x: SampleSet, fc: FilterConfig, cell_seed: int):
        norms = chunk_norms(x, fc.chunk_size, cell_seed)
        return lambda: filter_chunked(
            x, fc, RngStream(cell_seed), chunk_clean_norms=norms
        )

    re_times = []
    fc_re = FilterConfig(epsilon=epsilon, eps_jl=eps_jl, eps_p=eps_p)
    for d in d_values:
        x = _bench_data(n, d, seed, cell, frac, shift)
        ms, rep = _timed_call(run_randeigen(x, fc_re, seed + cell), timeout_s)
        rows.append(("RandEigen", d, "", ms, rep.iterations))
        re_times.append((d, ms))
        cell += 1

    ch_times = []
    for c in c_values:
        fc_ch = FilterConfig(epsilon=epsilon, chunk_size=int(c))
        x = _bench_data(chunked_n, chunked_d, seed, cell, frac, shift)
        ms, rep = _timed_call(run_chunked(x, fc_ch, seed + cell), timeout_s)
        rows.append(("Chunked", chunked_d, int(c), ms, rep.iterations))
        ch_times.append((int(c), ms))
        cell += 1

    ratio_pairs = []
    fc_ratio = FilterConfig(epsilon=epsilon, eps_jl=ratio_eps_jl, eps_p=ratio_eps_p)
    fc_ratio_ch = FilterConfig(epsilon=epsilon, chunk_size=int(ratio_c))
    for d in ratio_d_values:
        x = _bench_data(ratio_n, d, seed, cell, frac, shift)
        ms_re, rep_re = _timed_call(run_randeigen(x, fc_ratio, seed + cell), timeout_s)
        rows.append(("RandEigen", d, "", ms_re, rep_re.iterations))
        cell += 1
        ms_ch, rep_ch = _timed_call(run_chunked(x, fc_ratio_ch, seed + cell), timeout_s)
        rows.append(("Chunked", d, int(ratio_c), ms_ch, rep_ch.iterations))
        ratio_pairs.append((d, ms_ch / ms_re))
        cell += 1

    summary = []
    if len(re_times) >= 2:
        summary.append(
            ("slope_randeigen_vs_d", "", "", _fit_slope(*zip(*re_times)), "")
        )
    if len(ch_times) >= 2:
        per_chunk = [
            (c, ms / math.ceil(chunked_d / c)) for c, ms in ch_times
        ]
        summary.append(
            ("slope_chunked_per_chunk_vs_C", "", "", _fit_slope(*zip(*per_chunk)), "")
        )
    if len(ratio_pairs) >= 2:
        ratios = [r for _, r in sorted(ratio_pairs)]
        increasing = sum(1 for a, b in zip(ratios, ratios[1:]) if b > a)
        summary.append(("ratio_increasing_pairs", "", "", increasing, len(ratios) - 1))

    lines = ["algorithm,d,C,wall_ms,iterations"]
    for algorithm, d, c, ms, iterations in rows + summary:
        ms_text = repr(float(ms)) if isinstance(ms, float) else str(ms)
        lines.append(f"{algorithm},{d},{c},{ms_text},{iterations}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="ascii") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -------------------------------------------------------------- attack-eval

_ATTACK_EVAL_KEYS = frozenset(
    {
        "n",
        "d",
        "n_seeds",
        "seed",
        "attacks",
        "eps_values",
        "aggregators",
        "trim_fraction",
        "gamma",
    }
) | (_FILTER_KEYS - {"epsilon", "gamma"})

_ATTACK_SPEC_KEYS = frozenset({"strategy", "magnitude", "gamma_target", "rounds", "shift"})


def _attack_cell(
    attack_cfg: dict,
    eps: float,
    aggregator: str,
    cell: int,
    n: int,
    d: int,
    n_seeds: int,
    base_seed: int,
    fcfg_base: FilterConfig,
    trim: float,
) -> tuple[dict, list[str]]:
    biases, bounds, iterations, recalls = [], [], [], []
    violations = []
    for i in range(n_seeds):
        rng = RngStream(base_seed).derive(cell).derive(i)
        clean = SampleSet(rng.normal(n * d).reshape(n, d))
        spec = AttackSpec(epsilon=eps, **attack_cfg)
        corrupted = apply_attack(clean, spec, rng.derive(0))
        fcfg = replace(fcfg_base, epsilon=eps)
        vector, report = _run_aggregator(
            aggregator, corrupted.samples, fcfg, rng.derive(1), trim
        )
        bias = float(np.linalg.norm(vector - corrupted.clean_mean))
        if eps > 0.0:
            bound = bias_bound(eps, corrupted.clean_cov_norm)
        else:
            bound = _CLEAN_BIAS_FACTOR * math.sqrt(corrupted.clean_cov_norm)
        if aggregator in _STRONG_AGGREGATORS and bias > bound:
            violations.append(
                f"bias bound violated: {attack_cfg['strategy']} eps={eps} "
                f"{aggregator} seed {i}: bias {bias} > bound {bound}"
            )
        biases.append(bias)
        bounds.append(bound)
        iterations.append(report.iterations if report is not None else 0)
        if corrupted.n_corrupted:
            removed = report.removed_indices if report is not None else np.empty(0)
            hit = np.intersect1d(removed, corrupted.corrupted_indices).size
            recalls.append(hit / corrupted.n_corrupted)
        else:
            recalls.append(1.0)
    row = {
        "attack": attack_cfg["strategy"],
        "eps": eps,
        "aggregator": aggregator,
        "bias": statistics.median(biases),
        "bound": statistics.median(bounds),
        "iterations": int(statistics.median(iterations)),
        "removed_recall": statistics.mean(recalls),
    }
    return row, violations


def cmd_attack_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _ATTACK_EVAL_KEYS, "attack-eval")
    seed = _resolve_seed(args, cfg)
    n = cfg.get("n", 500)
    d = cfg.get("d", 64)
    n_seeds = cfg.get("n_seeds", 20)
    attacks = cfg.get("attacks", [{"strategy": "LargeOutlier"}])
    eps_values = cfg.get("eps_values", [0.1])
    aggregators = cfg.get("aggregators", ["RandEigen"])
    trim = cfg.get("trim_fraction", 0.1)
    for a in attacks:
        if not isinstance(a, dict):
            raise ConfigError("each attacks entry must be an object")
        _check_keys(a, _ATTACK_SPEC_KEYS, "attack spec")
        if a.get("strategy") not in STRATEGIES:
            raise ConfigError(f"unknown attack strategy {a.get('strategy')!r}")
    for name in aggregators:
        if name not in _CLI_AGGREGATORS:
            raise ConfigError(f"unknown aggregator {name!r}")
    fcfg_base = _build_filter_config(
        {k: v for k, v in cfg.items() if k in _FILTER_KEYS}, seed
    )

    cells = []
    cell_index = 0
    for attack_cfg in attacks:
        for eps in eps_values:
            for aggregator in aggregators:
                cells.append((attack_cfg, float(eps), aggregator, cell_index))
                cell_index += 1

    def work(item):
        attack_cfg, eps, aggregator, cell = item
        return _attack_cell(
            attack_cfg, eps, aggregator, cell, n, d, n_seeds, seed, fcfg_base, trim
        )

    threads = _worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(item) for item in cells]

    all_violations = [v for _, vs in results for v in vs]
    lines = ["attack,eps,aggregator,bias,bound,iterations,removed_recall"]
    for row, _ in results:
        lines.append(
            f"{row['attack']},{repr(float(row['eps']))},{row['aggregator']},"
            f"{repr(float(row['bias']))},{repr(float(row['bound']))},"
            f"{row['iterations']},{repr(float(row['removed_recall']))}"
        )
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="ascii") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if all_violations:
        for v in all_violations:
            _err(v)
        return EXIT_AGGREGATOR
    return EXIT_OK


# ---------------------------------------------------------- stability-check

_STABILITY_KEYS = frozenset({"eps", "delta", "n_directions", "seed"})


def cmd_stability_check(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _STABILITY_KEYS, "stability-check")
    seed = _resolve_seed(args, cfg)
    eps = cfg.get("eps", 0.05)
    delta_cfg = cfg.get("delta", "auto")
    n_directions = cfg.get("n_directions", 256)
    if args.input is None:
        raise ConfigError("stability-check requires --input")

    data = vectorfile.read(args.input)
    s = SampleSet(data)
    if delta_cfg == "auto":
        delta = default_delta(s)
    elif isinstance(delta_cfg, (int, float)) and not isinstance(delta_cfg, bool):
        delta = float(delta_cfg)
    else:
        raise ConfigError(f"delta must be a number or 'auto', got {delta_cfg!r}")

    report = check_stability(s, eps, delta, n_directions, RngStream(seed))
    bound = report.var_bound()
    out = {
        "eps": report.eps,
        "delta": report.delta,
        "max_mean_dev": report.max_mean_dev,
        "max_var_dev": report.max_var_dev,
        "var_bound": None if math.isinf(bound) else bound,
        "directions_tested": report.directions_tested,
        "holds": report.holds,
        "worst_mean_direction": [float(v) for v in report.worst_mean_direction],
        "worst_var_direction": [float(v) for v in report.worst_var_direction],
    }
    line = _json_line(out)
    print(line)
    if args.output:
        with open(args.output, "w", encoding="ascii") as fh:
            fh.write(line + "\n")
    return EXIT_OK if report.holds else EXIT_STABILITY_VIOLATED


# ------------------------------------------------------------------- fedsim

_FEDSIM_KEYS = frozenset(
    {
        "n_clients",
        "eps",
        "rounds",
        "learning_rate",
        "batch_size",
        "optimizer",
        "beta1",
        "beta2",
        "tau_adapt",
        "aggregator",
        "trim_fraction",
        "d",
        "samples_per_client",
        "heldout_size",
        "margin",
        "label_noise",
        "seed",
        "attack",
        "filter",
    }
)


def _build_fed_config(cfg: dict, seed: int) -> FedConfig:
    _check_keys(cfg, _FEDSIM_KEYS, "fedsim")
    attack = None
    if cfg.get("attack") is not None:
        a = cfg["attack"]
        if not isinstance(a, dict):
            raise ConfigError("attack must be an object")
        _check_keys(a, _ATTACK_SPEC_KEYS, "fedsim attack")
        try:
            attack = AttackSpec(epsilon=float(cfg.get("eps", 0.0)), **a)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid attack spec: {exc}") from exc
    filter_cfg = cfg.get("filter", {})
    if not isinstance(filter_cfg, dict):
        raise ConfigError("filter must be an object")
    _check_keys(filter_cfg, _FILTER_KEYS, "fedsim filter")
    fcfg = _build_filter_config(filter_cfg, seed)
    kwargs = {
        k: cfg[k]
        for k in _FEDSIM_KEYS - {"attack", "filter", "seed"}
        if k in cfg
    }
    try:
        return FedConfig(seed=seed, attack=attack, filter=fcfg, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fedsim settings: {exc}") from exc


def cmd_fedsim(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    fed = _build_fed_config(cfg, _resolve_seed(args, cfg))

    sink = open(args.output, "w", encoding="ascii") if args.output else sys.stdout
    close_sink = args.output is not None
    code = EXIT_OK
    try:
        task = make_task(fed)
        state = FedState(np.zeros(fed.d))
        base = RngStream(fed.seed)
        max_bias = 0.0
        completed = 0
        try:
            for r in range(fed.rounds):
                state, trace = run_round(state, fed, task, base.derive(r + 1), r)
                max_bias = max(max_bias, trace.bias)
                sink.write(
                    _json_line(
                        {
                            "round": trace.round_index,
                            "bias": trace.bias,
                            "loss": trace.loss,
                            "accuracy": trace.accuracy,
                            "iterations": trace.aggregator_iterations,
                            "samples_remaining": trace.samples_remaining,
                            "stop_reason": trace.stop_reason,
                        }
                    )
                    + "\n"
                )
                sink.flush()
                completed += 1
        except FedRoundError as exc:
            _err(str(exc))
            code = EXIT_AGGREGATOR
        loss, accuracy = evaluate(task, state.weights)
        sink.write(
            _json_line(
                {
                    "summary": True,
                    "rounds_completed": completed,
                    "final_accuracy": accuracy,
                    "final_loss": loss,
                    "max_bias": max_bias,
                }
            )
            + "\n"
        )
        sink.flush()
    finally:
        if close_sink:
            sink.close()
    return code


# --------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragg", description="Byzantine-robust mean aggregation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("aggregate", cmd_aggregate),
        ("bench-runtime", cmd_bench_runtime),
        ("attack-eval", cmd_attack_eval),
        ("stability-check", cmd_stability_check),
        ("fedsim", cmd_fedsim),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--input", metavar="PATH")
        p.add_argument("--output", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--format", choices=["csv", "bin", "json"], default="csv")
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, vectorfile.VectorFileError) as exc:
        _err(str(exc))
        return EXIT_MALFORMED
    except BenchTimeout as exc:
        _err(str(exc))
        return EXIT_BENCH_TIMEOUT
    except (
        AllSamplesRemoved,
        EmptySampleSet,
        FedRoundError,
        ThresholdBelowBenignVariance,
    ) as exc:
        _err(str(exc))
        return EXIT_AGGREGATOR
    except ValueError as exc:
        # Remaining ValueErrors come from config-driven constructor checks.
        _err(str(exc))
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
