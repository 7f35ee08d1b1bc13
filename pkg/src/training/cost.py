"""Training-cost comparison between one Supernet and K individually trained models."""

from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import duckdb
import polars as pl

from src.utils.config import Config, get_config
from src.utils.errors import CheckpointError
from src.utils.logger import LoggerMixin, print_info, print_success

DEFAULT_KS = tuple(range(3, 31, 3))


def _metrics_file(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path / "metrics.jsonl" if path.is_dir() else path


def _frame(conn: duckdb.DuckDBPyConnection, sql: str) -> pl.DataFrame:
    cursor = conn.execute(sql)
    columns = [d[0] for d in cursor.description]
    rows = cursor.fetchall()
    return pl.DataFrame(rows, schema=columns, orient="row")


class CostReporter(LoggerMixin):
    """Aggregate per-step FLOP records of several runs with DuckDB."""

    def __init__(self, config: Optional[Config] = None):
        """Initialize reporter.

        Args:
            config: Configuration object (uses global config if None)
        """
        self.config = config or get_config()

    def load_steps(self, conn: duckdb.DuckDBPyConnection, runs: Sequence[Union[str, Path]]) -> int:
        """Create table ``train_steps`` from the runs' metrics files.

        Args:
            conn: DuckDB connection
            runs: Run directories or metrics files

        Returns:
            Number of step records loaded

        Raises:
            CheckpointError: If a metrics file is missing
        """
        files = [_metrics_file(r) for r in runs]
        missing = [str(f) for f in files if not f.exists()]
        if missing:
            raise CheckpointError(f"metrics file(s) not found: {', '.join(missing)}")
        listing = ", ".join("'" + str(f).replace("'", "''") + "'" for f in files)
        conn.execute(
            f"""
            CREATE OR REPLACE TABLE train_steps AS
            SELECT run, mode, kd_mode, epoch, step, flops, wall_clock, aborted
            FROM read_json_auto([{listing}], format='newline_delimited', union_by_name=true)
            """
        )
        result = conn.execute("SELECT COUNT(*) FROM train_steps").fetchone()
        count = result[0] if result else 0
        self.logger.info(f"Loaded {count:,} step records from {len(files)} run(s)")
        return count

    def run_summary(self, conn: duckdb.DuckDBPyConnection) -> pl.DataFrame:
        """Total FLOPs and wall-clock per run."""
        return _frame(
            conn,
            """
            SELECT
                run,
                mode,
                kd_mode,
                COUNT(*) AS steps,
                SUM(CASE WHEN aborted THEN 1 ELSE 0 END) AS aborted_steps,
                SUM(flops)::BIGINT AS total_flops,
                SUM(wall_clock) AS wall_clock
            FROM train_steps
            GROUP BY run, mode, kd_mode
            ORDER BY mode, run
            """,
        )

    def report(
        self, runs: Sequence[Union[str, Path]], ks: Iterable[int] = DEFAULT_KS
    ) -> pl.DataFrame:
        """Cost of training K individual models against each Supernet run.

        The individual column is K times the mean total FLOPs of the individual
        runs (null when none were given); every Supernet run contributes a
        constant column, since one Supernet covers any number of deployments.

        Args:
            runs: Run directories or metrics files
            ks: Numbers of deployment targets

        Returns:
            DataFrame with columns ``K``, ``individual_flops`` and ``<run>_flops``
        """
        conn = duckdb.connect(":memory:")
        try:
            self.load_steps(conn, runs)
            summary = self.run_summary(conn)
        finally:
            conn.close()

        ks = [int(k) for k in ks]
        individual = summary.filter(pl.col("mode") == "individual")
        supernets = summary.filter(pl.col("mode") == "supernet")
        mean_individual = float(individual["total_flops"].mean()) if individual.height else None

        columns = {
            "K": ks,
            "individual_flops": [
                k * mean_individual if mean_individual is not None else None for k in ks
            ],
        }
        for row in supernets.iter_rows(named=True):
            columns[f"{row['run']}_flops"] = [float(row["total_flops"])] * len(ks)
        table = pl.DataFrame(columns, schema_overrides={"individual_flops": pl.Float64})
        print_info(
            f"{individual.height} individual run(s), {supernets.height} supernet run(s) in cost report"
        )
        return table

    def write(self, table: pl.DataFrame, out: Union[str, Path]) -> Path:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.write_csv(out)
        print_success(f"Cost report written to {out}")
        return out


def training_cost_report(
    runs: Sequence[Union[str, Path]],
    ks: Iterable[int] = DEFAULT_KS,
    config: Optional[Config] = None,
) -> pl.DataFrame:
    """Convenience wrapper around :meth:`CostReporter.report`."""
    return CostReporter(config).report(runs, ks)


def supernet_columns(table: pl.DataFrame) -> List[str]:
    return [c for c in table.columns if c.endswith("_flops") and c != "individual_flops"]
