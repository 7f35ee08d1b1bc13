"""Logging configuration and console utilities."""

import logging
import logging.config
import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table


def setup_logging(
    config_path: str = "config/logging.yaml",
    default_level: int = logging.INFO,
    use_rich: bool = True,
    logs_dir: str = "logs",
) -> None:
    """Setup logging configuration.

    Args:
        config_path: Path to logging configuration YAML file
        default_level: Default logging level if config file not found
        use_rich: Use rich console handler for prettier output
        logs_dir: Directory receiving the log files
    """
    config_file = Path(config_path)

    Path(logs_dir).mkdir(parents=True, exist_ok=True)

    if config_file.exists():
        try:
            with open(config_file, "r") as f:
                config = yaml.safe_load(f)
                logging.config.dictConfig(config)
        except Exception as e:
            print(f"Error loading logging config: {e}", file=sys.stderr)
            _setup_basic_logging(default_level, use_rich, logs_dir)
    else:
        _setup_basic_logging(default_level, use_rich, logs_dir)


def _setup_basic_logging(
    level: int = logging.INFO, use_rich: bool = True, logs_dir: str = "logs"
) -> None:
    """Setup basic logging configuration as fallback.

    Args:
        level: Logging level
        use_rich: Use rich console handler
        logs_dir: Directory receiving the log file
    """
    root_logger = logging.getLogger()
    root_logger.handlers.clear()

    if use_rich:
        console_handler = RichHandler(
            console=console,
            rich_tracebacks=True,
            markup=False,
            show_time=True,
            show_path=False,
        )
    else:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(
            logging.Formatter(
                "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S",
            )
        )
    console_handler.setLevel(level)

    file_handler = logging.FileHandler(Path(logs_dir) / "todm.log")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(
        logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    )

    root_logger.setLevel(logging.DEBUG)
    root_logger.addHandler(console_handler)
    root_logger.addHandler(file_handler)


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance with the specified name.

    Args:
        name: Logger name (typically __name__ of the module)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


class LoggerMixin:
    """Mixin class to add logging capability to any class."""

    @property
    def logger(self) -> logging.Logger:
        """Get logger for this class."""
        name = f"{self.__class__.__module__}.{self.__class__.__name__}"
        return get_logger(name)


console = Console(stderr=True)


def print_info(message: str) -> None:
    """Print info message with rich formatting."""
    console.print(f"[blue]ℹ[/blue] {message}")


def print_success(message: str) -> None:
    """Print success message with rich formatting."""
    console.print(f"[green]✓[/green] {message}")


def print_warning(message: str) -> None:
    """Print warning message with rich formatting."""
    console.print(f"[yellow]⚠[/yellow] {message}")


def print_error(message: str) -> None:
    """Print error message with rich formatting."""
    console.print(f"[red]✗[/red] {message}")


def print_section(title: str) -> None:
    """Print a section header."""
    console.rule(f"[bold blue]{title}[/bold blue]")


def print_table(
    title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]], float_format: str = "{:.4f}"
) -> None:
    """Render rows as a Rich table.

    Args:
        title: Table title
        columns: Column headers
        rows: Row values; floats are formatted with ``float_format``
        float_format: Format string for float cells
    """
    table = Table(title=title, show_header=True, header_style="bold magenta")
    for index, column in enumerate(columns):
        table.add_column(column, style="cyan" if index == 0 else None, justify="left" if index == 0 else "right")
    for row in rows:
        table.add_row(
            *(float_format.format(cell) if isinstance(cell, float) else str(cell) for cell in row)
        )
    console.print(table)


def make_progress(transient: bool = False, disable: Optional[bool] = None) -> Progress:
    """Progress bar used for epochs, decoding sweeps and generations."""
    return Progress(
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        TextColumn("{task.fields[status]}"),
        console=console,
        transient=transient,
        disable=bool(disable),
    )
