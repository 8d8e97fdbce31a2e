"""Experiment runner, trace persistence, aggregation, and the CLI."""

import json
import math
import sys

import numpy as np
import pytest

from ubo.cli import main
from ubo.harness import (
    ConfigError,
    ExperimentConfig,
    load_trace,
    make_problem,
    parse_trace,
    report,
    run_experiment,
    serialize_trace,
    trace_header,
    traces_equal,
    write_trace,
)
from ubo.strategy import Trace, TraceRecord

FAST = {"budget": 5, "init_count": 2, "mcmc_draws": 2, "mcmc_burn_in": 2}


def fast_config(tmp_path, methods=("EI",), seeds=(0,), problem="gaussian1d", jobs=1, **options):
    return ExperimentConfig(
        problem=problem,
        methods=tuple(methods),
        seeds=tuple(seeds),
        out_dir=tmp_path / "traces",
        problem_options=dict(options),
        strategy_overrides=dict(FAST),
        jobs=jobs,
    )


def synthetic_trace(method, seed, best_values):
    records = tuple(
        TraceRecord(i + 1, np.array([float(i)]), float(b), float(b), np.array([0.0]), np.array([1.0]), 0.0)
        for i, b in enumerate(best_values)
    )
    return Trace(method, seed, records, np.array([0.5]), None)


class TestTraceSerialization:
    def test_header_layout(self):
        assert trace_header(2) == "iter,x_0,x_1,y,best_y,box_lo_0,box_lo_1,box_hi_0,box_hi_1,wall_s"

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        records = tuple(
            TraceRecord(i + 1, rng.standard_normal(2), rng.standard_normal(), float(i), np.array([-1.0, -1.0]), np.array([1.0, 1.0]), 0.0)
            for i in range(7)
        )
        trace = Trace("EI-H", 3, records, rng.standard_normal(2), {"variant": "hinge_quadratic", "center": [0.0, 0.0], "radius": 1.0, "curvature": 1.0})
        csv_text, sidecar = serialize_trace(trace)
        assert traces_equal(parse_trace(csv_text, sidecar), trace)
        path = tmp_path / "t.csv"
        write_trace(trace, path)
        assert traces_equal(load_trace(path), trace)


class TestRunExperiment:
    def test_methods_by_seeds_layout(self, tmp_path):
        cfg = fast_config(tmp_path, methods=("EI", "EI-H"), seeds=(0, 1, 2))
        result = run_experiment(cfg)
        assert result.ok
        assert len(result.trace_paths) == 6
        names = sorted(p.name for p in result.trace_paths)
        assert names == [
            "EI-H_seed0000.csv", "EI-H_seed0001.csv", "EI-H_seed0002.csv",
            "EI_seed0000.csv", "EI_seed0001.csv", "EI_seed0002.csv",
        ]
        # common random seeds: both methods share each seed's initial design
        for seed in (0, 1, 2):
            a = load_trace(tmp_path / "traces" / f"EI_seed{seed:04d}.csv")
            b = load_trace(tmp_path / "traces" / f"EI-H_seed{seed:04d}.csv")
            for ra, rb in zip(a.records[:2], b.records[:2]):
                assert np.array_equal(ra.x, rb.x)

    def test_rerun_byte_identical(self, tmp_path):
        cfg1 = fast_config(tmp_path / "a", methods=("EI-V",), seeds=(4,))
        cfg2 = fast_config(tmp_path / "b", methods=("EI-V",), seeds=(4,))
        run_experiment(cfg1)
        run_experiment(cfg2)
        for name in ("EI-V_seed0004.csv", "EI-V_seed0004.json"):
            assert (tmp_path / "a" / "traces" / name).read_bytes() == (tmp_path / "b" / "traces" / name).read_bytes()

    def test_parallel_matches_inline(self, tmp_path):
        cfg1 = fast_config(tmp_path / "inline", methods=("EI",), seeds=(0, 1), jobs=1)
        cfg2 = fast_config(tmp_path / "pool", methods=("EI",), seeds=(0, 1), jobs=2)
        run_experiment(cfg1)
        run_experiment(cfg2)
        for seed in (0, 1):
            name = f"EI_seed{seed:04d}.csv"
            assert (tmp_path / "inline" / "traces" / name).read_bytes() == (tmp_path / "pool" / "traces" / name).read_bytes()

    def test_failing_run_leaves_stub_without_stopping_others(self, tmp_path):
        nan_cmd = f"{sys.executable} -c \"print(float('nan'))\""
        cfg = ExperimentConfig(
            problem="external",
            methods=("EI",),
            seeds=(0,),
            out_dir=tmp_path / "traces",
            problem_options={"command": nan_cmd, "dim": 1, "lower": [0.0], "upper": [1.0]},
            strategy_overrides=dict(FAST),
            jobs=1,
        )
        result = run_experiment(cfg)
        assert not result.ok
        assert len(result.error_paths) == 1
        stub = json.loads(result.error_paths[0].read_text())
        assert stub["error"] == "EvaluationError"
        assert "evaluation 1" in stub["message"]

    def test_config_validation(self, tmp_path):
        with pytest.raises(ConfigError):
            fast_config(tmp_path, methods=("EI-nope",))
        with pytest.raises(ConfigError):
            fast_config(tmp_path, problem="unknown-problem")
        with pytest.raises(ConfigError):
            ExperimentConfig(problem="hartmann3", methods=(), seeds=(0,), out_dir=tmp_path)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"problem": "hartmann3", "methods": ["EI"], "seeds": 1, "bogus": 1})

    def test_make_problem_registry(self):
        assert make_problem("hartmann6").dim == 6
        with pytest.raises(ConfigError):
            make_problem("external", {})  # missing required options


class TestReport:
    def test_single_trace_stderr_zero(self, tmp_path):
        write_trace(synthetic_trace("EI", 0, [1.0, 2.0, 2.5]), tmp_path / "EI_seed0000.csv")
        summary = report(tmp_path)
        s = summary.per_method["EI"]
        assert s.count == 1
        assert np.array_equal(s.mean_best, [1.0, 2.0, 2.5])
        assert np.array_equal(s.stderr, [0.0, 0.0, 0.0])

    def test_two_trace_hand_arithmetic(self, tmp_path):
        write_trace(synthetic_trace("EI", 0, [1.0, 1.0]), tmp_path / "EI_seed0000.csv")
        write_trace(synthetic_trace("EI", 1, [3.0, 3.0]), tmp_path / "EI_seed0001.csv")
        s = report(tmp_path).per_method["EI"]
        assert s.mean_best == pytest.approx([2.0, 2.0])
        assert s.stderr == pytest.approx([1.0, 1.0])  # std(ddof=1)/sqrt(2) = sqrt(2)/sqrt(2)

    def test_forty_trace_fixture_matches_independent_recomputation(self, tmp_path):
        rng = np.random.default_rng(33)
        n_iter = 12
        all_best = []
        for seed in range(40):
            best = np.maximum.accumulate(rng.uniform(0, 5, size=n_iter))
            all_best.append(best)
            write_trace(synthetic_trace("EI-Q", seed, best), tmp_path / f"EI-Q_seed{seed:04d}.csv")
        s = report(tmp_path).per_method["EI-Q"]
        assert s.count == 40
        # spreadsheet-style recomputation with plain loops
        for i in range(n_iter):
            column = [all_best[k][i] for k in range(40)]
            mean = sum(column) / 40
            var = sum((v - mean) ** 2 for v in column) / 39
            assert s.mean_best[i] == pytest.approx(mean, abs=1e-12)
            assert s.stderr[i] == pytest.approx(math.sqrt(var) / math.sqrt(40), abs=1e-12)

    def test_summary_axis_matches_budget(self, tmp_path):
        cfg = fast_config(tmp_path, methods=("EI", "EI-Q"), seeds=(0, 1))
        run_experiment(cfg)
        summary = report(tmp_path / "traces")
        for s in summary.per_method.values():
            assert len(s.iterations) == FAST["budget"]
            assert s.iterations[0] == 1 and s.iterations[-1] == FAST["budget"]

    def test_csv_output(self, tmp_path):
        write_trace(synthetic_trace("EI", 0, [1.0]), tmp_path / "EI_seed0000.csv")
        out = tmp_path / "summary.csv"
        report(tmp_path, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "method,iteration,mean_best,stderr,n_runs"
        assert lines[1] == "EI,1,1.0,0.0,1"

    def test_recommendation_table(self, tmp_path):
        write_trace(synthetic_trace("EI", 0, [1.0, 4.0]), tmp_path / "EI_seed0000.csv")
        summary = report(tmp_path)
        rec = summary.recommendations[0]
        assert rec["method"] == "EI" and rec["seed"] == 0
        assert rec["final_best"] == 4.0

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            report(tmp_path)


class TestCli:
    def test_bench_and_report_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "traces"
        code = main([
            "bench", "--problem", "gaussian1d", "--method", "EI", "--seeds", "1",
            "--budget", "4", "--out", str(out), "--jobs", "1",
        ])
        assert code == 0
        summary_file = tmp_path / "summary.csv"
        assert main(["report", "--in", str(out), "--out", str(summary_file)]) == 0
        assert summary_file.read_text().startswith("method,iteration")

    def test_run_with_config_file(self, tmp_path):
        cfg = {
            "problem": "gaussian1d",
            "methods": ["EI"],
            "seeds": 1,
            "strategy": FAST,
            "out_dir": str(tmp_path / "traces"),
            "jobs": 1,
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path)]) == 0
        assert (tmp_path / "traces" / "EI_seed0000.csv").exists()

    def test_usage_error_exit_code(self):
        assert main(["frobnicate"]) == 1
        assert main(["bench", "--problem", "nope", "--method", "EI", "--jobs", "1"]) == 1

    def test_partial_failure_exit_code(self, tmp_path):
        nan_cmd = f"{sys.executable} -c \"print(float('nan'))\""
        cfg = {
            "problem": "external",
            "problem_options": {"command": nan_cmd, "dim": 1, "lower": [0.0], "upper": [1.0]},
            "methods": ["EI"],
            "seeds": 1,
            "strategy": FAST,
            "out_dir": str(tmp_path / "traces"),
            "jobs": 1,
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path)]) == 2

    def test_report_missing_directory(self, tmp_path):
        assert main(["report", "--in", str(tmp_path / "missing")]) == 1
