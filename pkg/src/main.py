"""
Reputation-Reshaped MARL Laboratory
Main application entry point
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from src.config import load_config
from src.error_handling import LabError, handle_error
from src.experiments.selfcheck import run_checks
from src.experiments.sweep import report, run_experiment
from src.logging_config import setup_logging

logger = logging.getLogger(__name__)
console = Console()


def _summary_table(summary, title: str) -> Table:
    table = Table(title=title)
    for column in ("T", "S", "method", "final_cooperation", "stddev", "replicates"):
        table.add_column(column, justify="right" if column != "method" else "left")
    for row in summary.itertuples(index=False):
        table.add_row(f"{row.T:.3f}", f"{row.S:.3f}", str(row.method), f"{row.final_cooperation:.3f}",
                      f"{row.stddev:.3f}", str(row.replicates))
    return table


@click.group()
def cli():
    """Train reputation-reshaped agents on structured social dilemmas"""
    load_dotenv()


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Override a config key")
@click.option("--output-dir", default=None, help="Results directory")
@click.option("--workers", type=int, default=None, help="Parallel cells or arenas")
@click.option("--seed", type=int, default=None, help="Root seed")
def run(config_path: str, overrides: Tuple[str, ...], output_dir: Optional[str], workers: Optional[int],
        seed: Optional[int]):
    """Train every (T, S) x replicate cell described by CONFIG_PATH"""
    try:
        config = load_config(config_path, overrides, output_dir=output_dir, workers=workers, seed=seed)
    except LabError as e:
        error = handle_error(e)
        console.print(f"[red]{error['code']}[/red] {error['message']}")
        sys.exit(2)

    log_dir = Path(config.output.directory) / "logs" if config.logging.to_file else None
    setup_logging(log_dir, config.logging.level)
    logger.info(f"Starting run from {config_path}")

    outcome = run_experiment(config)
    if not outcome.summary.empty:
        console.print(_summary_table(outcome.summary, f"Run {outcome.run_dir.name}"))
    if not outcome.ok:
        console.print(f"[red]{len(outcome.failures)} cell(s) failed[/red]; details in {outcome.run_dir / 'failures.json'}")
        sys.exit(1)
    logger.info(f"Results written to {outcome.run_dir}")


@cli.command(name="report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report_command(run_dir: str):
    """Recompute summary.csv from a finished run directory"""
    setup_logging(None)
    try:
        summary = report(run_dir)
    except LabError as e:
        error = handle_error(e)
        console.print(f"[red]{error['code']}[/red] {error['message']}")
        sys.exit(1)
    console.print(_summary_table(summary, f"Summary of {Path(run_dir).name}"))


@cli.command()
def check():
    """Run the built-in invariant checks"""
    setup_logging(None, "WARNING")
    results = run_checks()

    table = Table(title="Invariant checks")
    table.add_column("check")
    table.add_column("status")
    table.add_column("detail")
    for result in results:
        status = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, status, result.detail)
    console.print(table)

    if not all(result.passed for result in results):
        sys.exit(1)


if __name__ == "__main__":
    cli()
