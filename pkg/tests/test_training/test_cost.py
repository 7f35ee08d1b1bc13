"""Tests for the metrics log and the training-cost report."""

import duckdb
import pytest

from src.training.cost import DEFAULT_KS, CostReporter, supernet_columns, training_cost_report
from src.training.metrics_log import MetricsLog, PassMetrics, StepMetrics
from src.training.trainer import SupernetTrainer
from src.utils.config import Config
from src.utils.errors import CheckpointError
from tests.conftest import tiny_config_dict


def write_run(directory, run, mode, kd_mode, step_flops, epochs=1):
    log = MetricsLog(directory / "metrics.jsonl")
    for epoch in range(epochs):
        for step, flops in enumerate(step_flops):
            record = StepMetrics(
                run=run,
                mode=mode,
                kd_mode=kd_mode,
                epoch=epoch,
                step=step,
                global_step=epoch * len(step_flops) + step,
                lr=0.006,
                kd_weight=1.0,
                optimizer="adam",
                passes=[PassMetrics("max", "d0:4-4-4", 4, 1.5, 0.0, 0.3, flops)],
                grad_norm=0.3,
                flops=flops,
                wall_clock=0.01,
            )
            log.append(record.to_record())
    return directory


class TestMetricsLog:
    def test_truncate_to_epoch(self, tmp_path):
        log = MetricsLog(tmp_path / "m.jsonl")
        for epoch in range(3):
            log.append({"epoch": epoch, "value": epoch * 2})
        assert log.truncate_to_epoch(1) == 1
        assert log.read() == [{"epoch": 0, "value": 0}]

    def test_non_finite_values_become_null(self, tmp_path):
        log = MetricsLog(tmp_path / "m.jsonl")
        log.append({"epoch": 0, "loss": float("nan"), "nested": [float("inf"), 1.0]})
        assert log.read() == [{"epoch": 0, "loss": None, "nested": [None, 1.0]}]

    def test_missing_file_reads_empty(self, tmp_path):
        assert MetricsLog(tmp_path / "absent.jsonl").read() == []

    def test_step_record(self):
        record = StepMetrics("r", "supernet", "alphaD", 0, 0, 0, 0.1, 1.0, "adam").to_record()
        assert record["n_passes"] == 0
        assert record["passes"] == []
        assert record["format"] == "todm-metrics/1"


class TestCostReport:
    @pytest.fixture
    def runs(self, tmp_path):
        return [
            write_run(tmp_path / "ind_a", "ind_a", "individual", "none", [100, 100, 100]),
            write_run(tmp_path / "ind_b", "ind_b", "individual", "none", [150, 150, 200]),
            write_run(tmp_path / "sn_kd", "sn_kd", "supernet", "alphaD", [500, 500], epochs=2),
            write_run(tmp_path / "sn_plain", "sn_plain", "supernet", "none", [400, 400], epochs=2),
        ]

    def test_individual_cost_is_linear_in_k(self, runs, tiny_config):
        table = CostReporter(tiny_config).report(runs, ks=[3, 6, 30])
        assert table["K"].to_list() == [3, 6, 30]
        assert table["individual_flops"].to_list() == pytest.approx([3 * 400.0, 6 * 400.0, 30 * 400.0])

    def test_supernet_columns_are_constant(self, runs, tiny_config):
        table = training_cost_report(runs, config=tiny_config)
        assert table["K"].to_list() == list(DEFAULT_KS)
        assert sorted(supernet_columns(table)) == ["sn_kd_flops", "sn_plain_flops"]
        assert set(table["sn_kd_flops"].to_list()) == {2000.0}
        assert set(table["sn_plain_flops"].to_list()) == {1600.0}

    def test_without_individual_runs(self, runs, tiny_config):
        table = CostReporter(tiny_config).report(runs[2:], ks=[3])
        assert table["individual_flops"].to_list() == [None]

    def test_run_summary(self, runs, tiny_config):
        reporter = CostReporter(tiny_config)
        conn = duckdb.connect(":memory:")
        try:
            assert reporter.load_steps(conn, runs) == 3 + 3 + 4 + 4
            summary = reporter.run_summary(conn)
        finally:
            conn.close()
        totals = dict(zip(summary["run"].to_list(), summary["total_flops"].to_list()))
        assert totals == {"ind_a": 300, "ind_b": 500, "sn_kd": 2000, "sn_plain": 1600}

    def test_write_csv(self, runs, tiny_config, tmp_path):
        reporter = CostReporter(tiny_config)
        out = reporter.write(reporter.report(runs, ks=[3]), tmp_path / "report" / "cost.csv")
        assert out.read_text().splitlines()[0].startswith("K,individual_flops")

    def test_missing_metrics(self, tmp_path, tiny_config):
        with pytest.raises(CheckpointError):
            CostReporter(tiny_config).report([tmp_path / "nothing"])


@pytest.mark.slow
class TestCostFromTrainingRuns:
    def run(self, tmp_path, corpus, name, **train):
        data = tiny_config_dict(tmp_path)
        data["train"].update({"run_name": name, "epochs": 1, **train})
        trainer = SupernetTrainer(Config.from_dict(data))
        return trainer.train(corpus.train).run_dir

    def test_supernet_constant_and_distillation_costlier(self, tmp_path, tiny_corpus):
        runs = [
            self.run(tmp_path, tiny_corpus, "kd", kd_mode="alphaD"),
            self.run(tmp_path, tiny_corpus, "plain", kd_mode="none"),
            self.run(tmp_path, tiny_corpus, "ind", mode="individual", kd_mode="none"),
        ]
        config = Config.from_dict(tiny_config_dict(tmp_path))
        table = CostReporter(config).report(runs, ks=[3, 6])
        assert len(set(table["kd_flops"].to_list())) == 1
        assert table["kd_flops"][0] > table["plain_flops"][0]
        individual = table["individual_flops"].to_list()
        assert individual[1] == pytest.approx(2 * individual[0])
