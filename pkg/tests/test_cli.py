"""Command-line surface: exit codes, config validation, output formats,
and byte-level determinism of every subcommand."""

import json
import subprocess
import sys

import numpy as np
import pytest

from ragg import vectorfile
from ragg.cli import main
from ragg.numeric import RngStream


def _write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="ascii")
    return str(path)


def _planted_file(tmp_path, n=40, d=4, seed=0):
    rng = RngStream(seed)
    data = rng.normal(n * d).reshape(n, d)
    data[: n // 10] += 8.0
    path = tmp_path / "planted.csv"
    vectorfile.write(str(path), data)
    return str(path)


class TestAggregate:
    def test_mean_of_single_row(self, tmp_path, capsys):
        src = tmp_path / "one.csv"
        src.write_text("1,2\n3.0,4.0\n", encoding="ascii")
        assert main(["aggregate", "--input", str(src)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["robust_mean"] == [3.0, 4.0]
        assert report["aggregator"] == "Mean"
        assert (report["n"], report["d"]) == (1, 2)

    def test_output_payload_row(self, tmp_path, capsys):
        src = tmp_path / "one.csv"
        src.write_text("1,2\n3.0,4.0\n", encoding="ascii")
        out = tmp_path / "mean.csv"
        assert main(["aggregate", "--input", str(src), "--output", str(out)]) == 0
        assert out.read_text(encoding="ascii") == "1,2\n3.0,4.0\n"

    def test_csv_and_bin_inputs_agree_byte_for_byte(self, tmp_path, capsys):
        data = RngStream(3).normal(12).reshape(6, 2)
        src_csv = tmp_path / "in.csv"
        src_bin = tmp_path / "in.bin"
        vectorfile.write(str(src_csv), data, "csv")
        vectorfile.write(str(src_bin), data, "bin")
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        assert main(["aggregate", "--input", str(src_csv), "--output", str(out_a)]) == 0
        assert main(["aggregate", "--input", str(src_bin), "--output", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == lines[1]

    def test_rand_eigen_report_deterministic(self, tmp_path, capsys):
        src = _planted_file(tmp_path)
        cfg = _write_config(tmp_path, {"aggregator": "RandEigen", "epsilon": 0.1})
        assert main(["aggregate", "--input", src, "--config", cfg]) == 0
        assert main(["aggregate", "--input", src, "--config", cfg]) == 0
        first, second = capsys.readouterr().out.splitlines()
        assert first == second
        report = json.loads(first)
        assert report["stop_reason"] in {
            "Convergence",
            "MaxIterations",
            "SampleFloor",
            "Degenerate",
        }
        assert len(report["eigenvalue_trace"]) >= report["iterations"]
        assert report["samples_remaining"] + sum(report["removed_counts"]) == 40

    def test_seed_flag_overrides_config(self, tmp_path, capsys):
        src = _planted_file(tmp_path)
        cfg = _write_config(tmp_path, {"seed": 5})
        assert main(["aggregate", "--input", src, "--config", cfg, "--seed", "9"]) == 0
        assert json.loads(capsys.readouterr().out)["seed"] == 9

    def test_json_output_mirrors_stdout(self, tmp_path, capsys):
        src = _planted_file(tmp_path)
        out = tmp_path / "report.json"
        args = ["aggregate", "--input", src, "--output", str(out), "--format", "json"]
        assert main(args) == 0
        assert out.read_text(encoding="ascii") == capsys.readouterr().out

    def test_bin_output_roundtrips(self, tmp_path, capsys):
        data = RngStream(4).normal(20).reshape(10, 2)
        src = tmp_path / "in.csv"
        vectorfile.write(str(src), data)
        out = tmp_path / "mean.bin"
        args = ["aggregate", "--input", src.as_posix(), "--output", str(out)]
        assert main(args + ["--format", "bin"]) == 0
        np.testing.assert_array_equal(
            vectorfile.read(str(out)), data.mean(axis=0).reshape(1, 2)
        )

    @pytest.mark.parametrize(
        "payload",
        [
            {"bogus": 1},
            {"aggregator": "Krum"},
            {"epsilon": 0.9},
            {"seed": "zero"},
        ],
        ids=["unknown-key", "unknown-aggregator", "bad-epsilon", "bad-seed"],
    )
    def test_bad_config_exits_2(self, tmp_path, capsys, payload):
        src = _planted_file(tmp_path)
        cfg = _write_config(tmp_path, payload)
        assert main(["aggregate", "--input", src, "--config", cfg]) == 2
        assert capsys.readouterr().err.startswith("ragg: ")

    def test_missing_input_exits_2(self, capsys):
        assert main(["aggregate"]) == 2
        assert "--input" in capsys.readouterr().err

    def test_malformed_file_exits_2(self, tmp_path, capsys):
        src = tmp_path / "bad.csv"
        src.write_text("2,3\n1.0,2.0,3.0\n", encoding="ascii")
        assert main(["aggregate", "--input", str(src)]) == 2
        assert capsys.readouterr().err.startswith("ragg: ")


class TestBenchRuntime:
    def test_smoke_rows_and_slopes(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            {
                "n": 64,
                "randeigen_d_values": [64, 128],
                "chunked_n": 64,
                "chunked_d": 128,
                "chunked_c_values": [64, 128],
                "ratio_d_values": [],
            },
        )
        out = tmp_path / "bench.csv"
        assert main(["bench-runtime", "--config", cfg, "--output", str(out)]) == 0
        lines = out.read_text(encoding="ascii").splitlines()
        assert lines[0] == "algorithm,d,C,wall_ms,iterations"
        assert len(lines) == 7
        assert sum(1 for l in lines if l.startswith("RandEigen,")) == 2
        assert sum(1 for l in lines if l.startswith("Chunked,")) == 2
        assert any(l.startswith("slope_randeigen_vs_d,") for l in lines)
        assert any(l.startswith("slope_chunked_per_chunk_vs_C,") for l in lines)

    def test_small_dimension_rejected(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"randeigen_d_values": [32]})
        assert main(["bench-runtime", "--config", cfg]) == 2
        assert ">= 64" in capsys.readouterr().err

    def test_timeout_exits_4(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path, {"randeigen_d_values": [256], "timeout_s": 1e-9}
        )
        assert main(["bench-runtime", "--config", cfg]) == 4
        assert "exceeded" in capsys.readouterr().err


class TestAttackEval:
    def test_grid_rows_respect_bounds(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            {
                "n": 80,
                "d": 8,
                "n_seeds": 3,
                "attacks": [{"strategy": "LargeOutlier"}],
                "eps_values": [0.0, 0.1],
                "aggregators": ["Mean", "RandEigen"],
            },
        )
        out = tmp_path / "grid.csv"
        assert main(["attack-eval", "--config", cfg, "--output", str(out)]) == 0
        lines = out.read_text(encoding="ascii").splitlines()
        assert lines[0] == "attack,eps,aggregator,bias,bound,iterations,removed_recall"
        assert len(lines) == 5
        for line in lines[1:]:
            fields = line.split(",")
            assert fields[0] == "LargeOutlier"
            if fields[2] == "RandEigen":
                assert float(fields[3]) <= float(fields[4])

    def test_threshold_filter_bypassed_but_not_rand_eigen(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            {
                "n": 200,
                "d": 8,
                "n_seeds": 5,
                "attacks": [{"strategy": "AdaptiveBelowThreshold"}],
                "eps_values": [0.1],
                "aggregators": ["FilterThreshold", "RandEigen"],
            },
        )
        out = tmp_path / "pair.csv"
        assert main(["attack-eval", "--config", cfg, "--output", str(out)]) == 0
        rows = [l.split(",") for l in out.read_text("ascii").splitlines()[1:]]
        by_agg = {r[2]: r for r in rows}
        # the threshold defense never iterates and removes nothing
        assert int(by_agg["FilterThreshold"][5]) == 0
        assert float(by_agg["FilterThreshold"][6]) == 0.0
        assert float(by_agg["RandEigen"][6]) == 1.0
        assert float(by_agg["FilterThreshold"][3]) >= 2.0 * float(by_agg["RandEigen"][3])

    def test_thread_count_never_changes_results(self, tmp_path, monkeypatch):
        cfg = _write_config(
            tmp_path,
            {
                "n": 60,
                "d": 4,
                "n_seeds": 2,
                "attacks": [{"strategy": "LargeOutlier"}, {"strategy": "CoordinateShift"}],
                "eps_values": [0.1],
                "aggregators": ["RandEigen"],
            },
        )
        out_serial = tmp_path / "serial.csv"
        out_pooled = tmp_path / "pooled.csv"
        monkeypatch.delenv("RAGG_THREADS", raising=False)
        assert main(["attack-eval", "--config", cfg, "--output", str(out_serial)]) == 0
        monkeypatch.setenv("RAGG_THREADS", "3")
        assert main(["attack-eval", "--config", cfg, "--output", str(out_pooled)]) == 0
        assert out_serial.read_bytes() == out_pooled.read_bytes()

    def test_bad_threads_env_exits_2(self, tmp_path, monkeypatch, capsys):
        cfg = _write_config(tmp_path, {"n_seeds": 1})
        monkeypatch.setenv("RAGG_THREADS", "zero")
        assert main(["attack-eval", "--config", cfg]) == 2
        assert "RAGG_THREADS" in capsys.readouterr().err

    def test_unknown_strategy_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"attacks": [{"strategy": "SignFlip"}]})
        assert main(["attack-eval", "--config", cfg]) == 2
        assert "SignFlip" in capsys.readouterr().err


class TestStabilityCheck:
    def test_identical_points_hold_with_zero_devs(self, tmp_path, capsys):
        src = tmp_path / "same.csv"
        src.write_text("4,2\n" + "1.0,2.0\n" * 4, encoding="ascii")
        assert main(["stability-check", "--input", str(src)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["holds"] is True
        assert report["max_mean_dev"] == 0.0
        assert report["max_var_dev"] == 0.0

    def test_two_point_mean_deviation_is_one(self, tmp_path, capsys):
        src = tmp_path / "pair.csv"
        src.write_text("2,1\n-1.0\n1.0\n", encoding="ascii")
        cfg = _write_config(tmp_path, {"eps": 0.5, "delta": 1.0})
        assert main(["stability-check", "--input", str(src), "--config", cfg]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["max_mean_dev"] == pytest.approx(1.0, abs=1e-12)

    def test_violation_exits_5_with_worst_direction(self, tmp_path, capsys):
        src = tmp_path / "pair.csv"
        src.write_text("2,1\n-1.0\n1.0\n", encoding="ascii")
        cfg = _write_config(tmp_path, {"eps": 0.5, "delta": 0.99})
        assert main(["stability-check", "--input", str(src), "--config", cfg]) == 5
        report = json.loads(capsys.readouterr().out)
        assert report["holds"] is False
        assert len(report["worst_mean_direction"]) == 1

    def test_gaussian_auto_delta_holds(self, tmp_path, capsys):
        data = RngStream(0).normal(2000 * 4).reshape(2000, 4)
        src = tmp_path / "gauss.csv"
        vectorfile.write(str(src), data)
        cfg = _write_config(tmp_path, {"eps": 0.05})
        assert main(["stability-check", "--input", str(src), "--config", cfg]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["holds"] is True
        assert report["delta"] > 0.0

    def test_bad_delta_exits_2(self, tmp_path, capsys):
        src = tmp_path / "same.csv"
        src.write_text("2,1\n1.0\n1.0\n", encoding="ascii")
        cfg = _write_config(tmp_path, {"delta": "big"})
        assert main(["stability-check", "--input", str(src), "--config", cfg]) == 2
        assert "delta" in capsys.readouterr().err


class TestFedsim:
    def test_zero_rounds_summary_only(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"rounds": 0})
        assert main(["fedsim", "--config", cfg]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 1
        summary = json.loads(lines[0])
        assert summary["summary"] is True
        assert summary["rounds_completed"] == 0
        assert abs(summary["final_accuracy"] - 0.5) <= 0.05

    def test_streams_one_line_per_round(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"rounds": 3})
        assert main(["fedsim", "--config", cfg]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert len(lines) == 4
        assert [l["round"] for l in lines[:3]] == [0, 1, 2]
        for l in lines[:3]:
            assert {"bias", "loss", "accuracy", "iterations", "samples_remaining"} <= set(l)
        assert lines[3]["rounds_completed"] == 3

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            {
                "seed": 2,
                "rounds": 5,
                "eps": 0.2,
                "attack": {"strategy": "LargeOutlier", "magnitude": 500.0},
                "aggregator": "RandEigen",
                "filter": {"epsilon": 0.2},
            },
        )
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        assert main(["fedsim", "--config", cfg, "--output", str(out_a)]) == 0
        assert main(["fedsim", "--config", cfg, "--output", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_attack_contrast_reproduces_registered_thresholds(self, tmp_path):
        base = {
            "seed": 2,
            "eps": 0.2,
            "attack": {"strategy": "LargeOutlier", "magnitude": 500.0},
        }
        finals = {}
        for name, extra in (
            ("Mean", {}),
            ("RandEigen", {"aggregator": "RandEigen", "filter": {"epsilon": 0.2}}),
        ):
            cfg = _write_config(tmp_path, {**base, **extra})
            out = tmp_path / f"{name}.jsonl"
            assert main(["fedsim", "--config", cfg, "--output", str(out)]) == 0
            summary = json.loads(out.read_text("ascii").splitlines()[-1])
            finals[name] = summary["final_accuracy"]
        assert finals["Mean"] <= 0.65
        assert finals["RandEigen"] >= 0.85

    def test_partial_trace_preserved_on_failure(self, tmp_path, capsys):
        cfg = _write_config(
            tmp_path,
            {
                "rounds": 4,
                "eps": 0.2,
                "attack": {"strategy": "AdaptiveBelowThreshold", "gamma_target": 1e-12},
            },
        )
        out = tmp_path / "broken.jsonl"
        assert main(["fedsim", "--config", cfg, "--output", str(out)]) == 3
        assert "round 0" in capsys.readouterr().err
        lines = out.read_text("ascii").splitlines()
        summary = json.loads(lines[-1])
        assert summary["summary"] is True
        assert summary["rounds_completed"] == len(lines) - 1 == 0

    @pytest.mark.parametrize(
        "payload",
        [
            {"rounds": 3, "bogus": 1},
            {"filter": []},
            {"attack": {"strategy": "LargeOutlier", "seed": 1}},
            {"optimizer": "Adagrad"},
        ],
        ids=["unknown-key", "filter-type", "attack-key", "bad-optimizer"],
    )
    def test_bad_config_exits_2(self, tmp_path, capsys, payload):
        cfg = _write_config(tmp_path, payload)
        assert main(["fedsim", "--config", cfg]) == 2
        assert capsys.readouterr().err.startswith("ragg: ")


class TestConsoleEntry:
    def test_module_invocation_round_trips(self, tmp_path):
        src = tmp_path / "one.csv"
        src.write_text("1,2\n3.0,4.0\n", encoding="ascii")
        proc = subprocess.run(
            [sys.executable, "-m", "ragg.cli", "aggregate", "--input", str(src)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["robust_mean"] == [3.0, 4.0]
