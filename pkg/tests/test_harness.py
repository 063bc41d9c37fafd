"""Metrics, batch runner, config loading, and the command-line interface."""

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from provlm.backends import NoiseConfig
from provlm.cli import main as cli_main
from provlm.config import RunConfig, load_run_config
from provlm.errors import AccountingError, ConfigError
from provlm.harness import derive_seed, run_batch, run_scenario, score_report
from provlm.metrics import (
    MetricInputs,
    SemanticLocationPair,
    compute_metrics,
    compute_rate,
    compute_slpc,
)
from provlm.planner import PlannerConfig
from provlm.scenario import load_scenario

SCENARIOS = Path(__file__).parent.parent / "scenarios"


def pair(correct=True):
    return SemanticLocationPair(
        gt_id="a",
        gt_category="bolt",
        box_lo=(0.0, 0.0, 0.0),
        box_hi=(0.1, 0.1, 0.1),
        predicted_category="bolt" if correct else "nut",
        predicted_center=(0.05, 0.05, 0.05),
    )


class TestSemanticLocationPair:
    def test_correct(self):
        assert pair().correct()

    def test_wrong_category(self):
        assert not pair(correct=False).correct()

    def test_center_outside_box(self):
        p = SemanticLocationPair(
            "a", "bolt", (0, 0, 0), (0.1, 0.1, 0.1), "bolt", (0.2, 0.05, 0.05)
        )
        assert not p.correct()

    def test_center_on_face_counts(self):
        p = SemanticLocationPair(
            "a", "bolt", (0, 0, 0), (0.1, 0.1, 0.1), "bolt", (0.1, 0.05, 0.0)
        )
        assert p.correct()

    def test_missing_prediction(self):
        p = SemanticLocationPair("a", "bolt", (0, 0, 0), (0.1, 0.1, 0.1))
        assert not p.correct()


class TestRates:
    def test_simple_rates(self):
        assert compute_rate(3, 4) == 75.0
        assert compute_rate(0, 5) == 0.0
        assert compute_rate(5, 5) == 100.0

    def test_zero_attempts_is_undefined(self):
        assert compute_rate(0, 0) is None

    def test_successes_exceed_attempts(self):
        with pytest.raises(AccountingError):
            compute_rate(2, 1)

    def test_negative_attempts(self):
        with pytest.raises(AccountingError):
            compute_rate(0, -1)

    def test_slpc_empty_is_undefined(self):
        assert compute_slpc([]) is None

    def test_slpc_mixed(self):
        assert compute_slpc([pair(), pair(correct=False)]) == 50.0

    def test_compute_metrics_nulls_preserved(self):
        report = compute_metrics(MetricInputs())
        assert report.to_dict() == {"slpc": None, "tpsr": None, "msr": None, "tsr": None}

    def test_compute_metrics_full(self):
        inputs = MetricInputs(
            semantic_location_pairs=[pair(), pair()],
            plan_attempts=2, plan_successes=1,
            subtask_attempts=10, subtask_successes=9,
            task_attempts=2, task_successes=2,
        )
        doc = compute_metrics(inputs).to_dict()
        assert doc == {"slpc": 100.0, "tpsr": 50.0, "msr": 90.0, "tsr": 100.0}

    def test_merge_accumulates(self):
        a = MetricInputs(plan_attempts=1, plan_successes=1, subtask_attempts=3)
        b = MetricInputs(plan_attempts=1, subtask_attempts=2, semantic_location_pairs=[pair()])
        a.merge(b)
        assert a.plan_attempts == 2 and a.subtask_attempts == 5
        assert len(a.semantic_location_pairs) == 1

    def test_validate_catches_bad_counters(self):
        with pytest.raises(AccountingError):
            compute_metrics(MetricInputs(task_attempts=1, task_successes=2))


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, 3) == derive_seed(7, 3)

    def test_distinct_indices(self):
        seeds = {derive_seed(0, i) for i in range(100)}
        assert len(seeds) == 100

    def test_in_uint32_range(self):
        assert 0 <= derive_seed(2**31, 999) < 2**32


ALL_SCENARIOS = sorted(SCENARIOS.glob("*.json"))


class TestRunBatch:
    def test_aggregate_counters(self):
        result = run_batch(ALL_SCENARIOS, RunConfig(), repetitions=1, master_seed=0)
        assert result.aggregate.task_attempts == len(ALL_SCENARIOS)
        assert result.aggregate.task_successes == len(ALL_SCENARIOS)
        doc = result.to_dict()
        assert doc["metrics"]["tsr"] == 100.0 and doc["metrics"]["slpc"] == 100.0
        assert doc["parse_failures"] == []

    def test_byte_identical_reruns(self):
        a = run_batch(ALL_SCENARIOS, RunConfig(), repetitions=2, master_seed=11)
        b = run_batch(ALL_SCENARIOS, RunConfig(), repetitions=2, master_seed=11)
        assert a.to_bytes() == b.to_bytes()

    def test_different_master_seed_changes_seeds(self):
        a = run_batch(ALL_SCENARIOS[:1], RunConfig(), master_seed=1)
        b = run_batch(ALL_SCENARIOS[:1], RunConfig(), master_seed=2)
        assert a.reports[0].seed != b.reports[0].seed

    def test_parse_failures_listed_and_excluded(self, tmp_path):
        good = tmp_path / "good.json"
        shutil.copy(ALL_SCENARIOS[0], good)
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        result = run_batch(sorted(tmp_path.glob("*.json")), RunConfig())
        assert len(result.failures) == 1
        assert result.failures[0][0] == bad
        assert result.aggregate.task_attempts == 1
        doc = result.to_dict()
        assert doc["parse_failures"][0]["path"].endswith("bad.json")

    def test_cyclic_plan_counts_planning_failure(self, tmp_path):
        doc = json.loads(ALL_SCENARIOS[0].read_text())
        doc["plan"][0]["depends_on"] = [doc["plan"][1]["id"]]
        path = tmp_path / "cyclic.json"
        path.write_text(json.dumps(doc))
        result = run_batch([path], RunConfig())
        agg = result.aggregate
        assert agg.plan_attempts == 1 and agg.plan_successes == 0
        assert agg.task_successes == 0
        metrics = result.to_dict()["metrics"]
        assert metrics["tpsr"] == 0.0 and metrics["tsr"] == 0.0
        assert metrics["msr"] is None  # no subtask ever attempted

    def test_score_report_roundtrip(self, tmp_path):
        result = run_batch(ALL_SCENARIOS, RunConfig())
        path = tmp_path / "report.json"
        path.write_bytes(result.to_bytes())
        scored = score_report(path)
        assert scored == result.to_dict()["metrics"]


class TestRunScenario:
    def test_single_run(self):
        scn = load_scenario(ALL_SCENARIOS[0])
        report = run_scenario(scn, RunConfig(), seed=5)
        assert report.completed and report.seed == 5

    def test_unknown_backend_rejected(self):
        scn = load_scenario(ALL_SCENARIOS[0])
        with pytest.raises(ConfigError):
            run_scenario(scn, RunConfig(backend="quantum"))


class TestLoadRunConfig:
    def test_defaults_without_file(self):
        cfg = load_run_config(None)
        assert cfg.backend == "scripted"
        default = PlannerConfig()
        assert cfg.planner.max_iterations == default.max_iterations
        assert cfg.planner.retry_cap == default.retry_cap
        assert cfg.planner.zone_cfg.r1 == default.zone_cfg.r1
        assert cfg.noise == NoiseConfig()

    def test_sections_applied(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "zone": {"r1": 0.2, "r2": 0.8},
            "planner": {"max_iterations": 9, "retry_cap": 2},
            "noise": {"fail_first_n_fine": 1},
        }))
        cfg = load_run_config(path)
        assert cfg.planner.zone_cfg.r1 == 0.2
        assert cfg.planner.max_iterations == 9 and cfg.planner.retry_cap == 2
        assert cfg.noise.fail_first_n_fine == 1

    def test_bad_section_key(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"planner": {"warp_speed": True}}))
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unknown_backend(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"backend": "quantum"}))
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "missing.json")


class TestCli:
    def test_run_prints_metrics(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "report.json"
        result = runner.invoke(
            cli_main, ["run", str(ALL_SCENARIOS[0]), "--report", str(out)]
        )
        assert result.exit_code == 0, result.output
        head = json.loads(result.output[: result.output.rindex("}") + 1])
        assert head["completed"] is True and head["tsr"] == 100.0
        saved = json.loads(out.read_text())
        assert saved["completed"] is True and saved["traces"]

    def test_batch_with_report(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "batch.json"
        result = runner.invoke(
            cli_main, ["batch", str(SCENARIOS), "--seed", "3", "--report", str(out)]
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_bytes())
        assert doc["metrics"]["tsr"] == 100.0
        assert doc["master_seed"] == 3

    def test_batch_empty_dir(self, tmp_path):
        result = CliRunner().invoke(cli_main, ["batch", str(tmp_path)])
        assert result.exit_code != 0
        assert "no scenario files" in result.output

    def test_score_command(self, tmp_path):
        out = tmp_path / "batch.json"
        CliRunner().invoke(cli_main, ["batch", str(SCENARIOS), "--report", str(out)])
        result = CliRunner().invoke(cli_main, ["score", str(out)])
        assert result.exit_code == 0
        assert json.loads(result.output)["tsr"] == 100.0

    def test_run_bad_scenario_is_clean_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        result = CliRunner().invoke(cli_main, ["run", str(bad)])
        assert result.exit_code != 0
        assert "Error" in result.output and "Traceback" not in result.output

    def test_render_command(self, tmp_path):
        pytest.importorskip("PIL")
        out = tmp_path / "frames"
        result = CliRunner().invoke(
            cli_main, ["render", str(ALL_SCENARIOS[0]), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert (out / "rgb.png").exists() and (out / "depth_mm.png").exists()
