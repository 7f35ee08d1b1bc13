"""Tests for Pareto filtering and front files."""

import json

import numpy as np
import polars as pl
import pytest

from src.search.pareto import FRONT_FORMAT, ParetoEntry, front_table, pareto_filter, read_front, write_front
from src.supernet.search_space import SubnetworkConfig
from src.utils.errors import CheckpointError


def entry(i, size, wer):
    return ParetoEntry(SubnetworkConfig(0, (i + 1,)), size, wer)


def quadratic_front(entries):
    return [e for e in entries if not any(other.dominates(e) for other in entries)]


def keys(entries):
    return sorted((e.size_bytes, e.wer, e.config.key()) for e in entries)


class TestParetoFilter:
    def test_example(self):
        a, b, c, d = entry(0, 10, 0.5), entry(1, 20, 0.4), entry(2, 15, 0.6), entry(3, 20, 0.3)
        assert pareto_filter([a, b, c, d]) == [a, d]

    def test_equal_points_all_survive(self):
        a, b = entry(0, 10, 0.5), entry(1, 10, 0.5)
        assert keys(pareto_filter([b, a])) == keys([a, b])

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(0, 30))
            entries = [
                entry(i, int(rng.integers(1, 15)), float(rng.integers(0, 8)) / 8) for i in range(n)
            ]
            assert keys(pareto_filter(entries)) == keys(quadratic_front(entries))

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        entries = [entry(i, int(rng.integers(1, 40)), float(rng.random())) for i in range(50)]
        once = pareto_filter(entries)
        assert pareto_filter(once) == once

    def test_sorted_by_size(self):
        rng = np.random.default_rng(2)
        entries = [entry(i, int(rng.integers(1, 40)), float(rng.random())) for i in range(50)]
        sizes = [e.size_bytes for e in pareto_filter(entries)]
        assert sizes == sorted(sizes)

    def test_empty(self):
        assert pareto_filter([]) == []


class TestFrontFiles:
    @pytest.fixture
    def entries(self):
        return [
            ParetoEntry(SubnetworkConfig(1, (2, 2)), 300, 0.75, "greedy", 4),
            ParetoEntry(SubnetworkConfig(0, (4, 4, 4)), 651, 0.5, "greedy", 4),
        ]

    def test_round_trip(self, tmp_path, entries):
        path = write_front(entries, tmp_path / "fronts" / "front.json", {"constraints": [300, 651]})
        assert read_front(path) == entries
        document = json.loads(path.read_text())
        assert document["format"] == FRONT_FORMAT
        assert document["constraints"] == [300, 651]
        assert document["entries"][0]["config"] == "d1:2-2"

    def test_csv_twin(self, tmp_path, entries):
        path = write_front(entries, tmp_path / "front.json")
        table = pl.read_csv(path.with_suffix(".csv"))
        assert table["config"].to_list() == ["d1:2-2", "d0:4-4-4"]
        assert table["size_bytes"].to_list() == [300, 651]

    def test_table_columns(self, entries):
        table = front_table(entries)
        assert table.columns == ["config", "n_layers", "size_bytes", "size_mb", "wer", "decoder", "seed"]
        assert table["n_layers"].to_list() == [2, 3]

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_front(tmp_path / "absent.json")

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "front.json"
        path.write_text(json.dumps({"format": "other", "entries": []}))
        with pytest.raises(CheckpointError):
            read_front(path)

    def test_record_round_trip(self, entries):
        for e in entries:
            assert ParetoEntry.from_record(e.to_record()) == e
