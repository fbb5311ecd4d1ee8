"""
Experiment Sweeps
(T, S) x replicate cells, final cooperation levels and the heat-map summary
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import ExperimentConfig, dump_config
from src.core.games import make_payoff_matrix
from src.error_handling import ValidationError, handle_error
from src.runtime.arena import ArenaConfig, TopologySpec, TrainingJob, run_training

logger = logging.getLogger(__name__)

FINAL_WINDOW = 10
SUMMARY_COLUMNS = ["T", "S", "method", "final_cooperation", "stddev", "replicates"]


@dataclass(frozen=True)
class Cell:
    T: float
    S: float
    replicate: int
    seed: int

    @property
    def name(self) -> str:
        return f"T{self.T:+.3f}_S{self.S:+.3f}_r{self.replicate}"


@dataclass
class SweepOutcome:
    run_dir: Path
    summary: pd.DataFrame
    cells: pd.DataFrame
    failures: List[Dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def expand_cells(config: ExperimentConfig) -> List[Cell]:
    return [
        Cell(T=T, S=S, replicate=r, seed=config.arena.replicate_seed(r))
        for T in config.game.t_values()
        for S in config.game.s_values()
        for r in range(config.arena.replicates)
    ]


def default_run_id(config: ExperimentConfig) -> str:
    """Method label plus a digest of the settings that affect results"""
    payload = config.model_dump(mode="json")
    payload["arena"].pop("workers")
    payload["arena"].pop("learner_workers")
    payload.pop("output")
    payload.pop("logging")
    digest = hashlib.sha1(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:8]
    return f"{config.method.name.replace(':', '-')}-{digest}"


def build_job(config: ExperimentConfig, cell: Cell, run_id: str, cell_dir: Optional[Path],
              arena_workers: Optional[int] = None) -> TrainingJob:
    topology = config.topology
    return TrainingJob(
        run_id=run_id,
        game=make_payoff_matrix(cell.T, cell.S),
        T=cell.T,
        S=cell.S,
        spec=config.method.spec(),
        hyperparameters=config.lr2.hyperparameters(),
        settings=config.episode_settings(),
        arena=ArenaConfig(
            n_arenas=config.arena.n_arenas,
            episodes=config.arena.episodes,
            timesteps_per_episode=config.arena.steps,
            seed=cell.seed,
            n_agents=topology.population_size,
            learner_workers=config.arena.learner_workers,
            workers=config.arena.workers if arena_workers is None else arena_workers,
            log_every=config.logging.every,
            stream_every=config.output.stream_every,
            checkpoint_every=config.arena.checkpoint_every,
            checkpoint_text=config.output.checkpoint_text,
            snapshot_episodes=tuple(config.output.snapshot_episodes),
        ),
        topology=TopologySpec(
            kind=topology.topology_kind,
            side=topology.side,
            n_agents=topology.n_agents,
            group_size=topology.group_size,
            resample_each_step=topology.resample_each_step,
        ),
        replicate=cell.replicate,
        adversarial_fraction=config.method.adversarial_fraction,
        output_dir=cell_dir,
    )


def final_cooperation(metrics: Union[pd.DataFrame, Sequence[float]], window: int = FINAL_WINDOW) -> float:
    """Mean cooperation over the last window episodes, then mean over replicates"""
    if isinstance(metrics, pd.DataFrame):
        frame = metrics if "replicate" in metrics.columns else metrics.assign(replicate=0)
        tails = [
            final_cooperation(group.sort_values("episode")["cooperation"].to_numpy(), window)
            for _, group in frame.groupby("replicate", sort=True)
        ]
        if not tails:
            raise ValidationError("No metrics rows to summarise")
        return float(np.mean(tails))

    values = np.asarray(metrics, dtype=np.float64)
    if values.size < window:
        raise ValidationError(f"final_cooperation needs at least {window} episodes, got {values.size}")
    return float(values[-window:].mean())


def sweep_summary(cell_results: pd.DataFrame) -> pd.DataFrame:
    """One row per (T, S, method): replicate mean and population stddev"""
    grouped = cell_results.groupby(["T", "S", "method"], sort=True)["final_cooperation"]
    summary = grouped.agg(
        final_cooperation="mean",
        stddev=lambda x: float(np.std(x.to_numpy(), ddof=0)),
        replicates="count",
    ).reset_index()
    return summary.sort_values(["T", "S"], kind="mergesort").reset_index(drop=True)[SUMMARY_COLUMNS]


def run_cell(config: ExperimentConfig, cell: Cell, run_id: str, run_dir: Path,
             arena_workers: Optional[int] = None) -> Dict:
    cell_dir = run_dir / "cells" / cell.name
    job = build_job(config, cell, run_id, cell_dir, arena_workers)
    result = run_training(job)
    return {
        "cell": cell.name,
        "T": cell.T,
        "S": cell.S,
        "method": config.method.name,
        "replicate": cell.replicate,
        "seed": cell.seed,
        "final_cooperation": final_cooperation(result.sink.metrics_frame()),
        "elapsed": result.elapsed,
    }


def _run_cell_safely(args: Tuple[ExperimentConfig, Cell, str, Path, Optional[int]]) -> Tuple[Optional[Dict], Optional[Dict]]:
    config, cell, run_id, run_dir, arena_workers = args
    try:
        return run_cell(config, cell, run_id, run_dir, arena_workers), None
    except Exception as e:
        failure = handle_error(e)
        failure["cell"] = cell.name
        logger.warning(f"Cell {cell.name} failed: {failure['message']}")
        return None, failure


def write_summary(run_dir: Path, cell_rows: Sequence[Dict], failures: Sequence[Dict]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    cells = pd.DataFrame(list(cell_rows))
    if cells.empty:
        summary = pd.DataFrame(columns=SUMMARY_COLUMNS)
    else:
        summary = sweep_summary(cells)
    summary.to_csv(run_dir / "summary.csv", index=False)
    failures_path = run_dir / "failures.json"
    if failures:
        with open(failures_path, "w") as f:
            json.dump(list(failures), f, indent=2)
    elif failures_path.exists():
        failures_path.unlink()
    return summary, cells


def run_experiment(config: ExperimentConfig) -> SweepOutcome:
    """Every (T, S) x replicate cell; failed cells are recorded and the rest continue"""
    run_id = config.output.run_id or default_run_id(config)
    run_dir = Path(config.output.directory) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config.model_copy(update={"output": config.output.model_copy(update={"run_id": run_id})}),
                run_dir / "effective_config.yaml")

    cells = expand_cells(config)
    logger.info(f"Run {run_id}: {len(cells)} cell(s) of method {config.method.name} into {run_dir}")

    workers = config.arena.workers
    if workers > 1 and len(cells) > 1:
        tasks = [(config, cell, run_id, run_dir, 1) for cell in cells]
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            outcomes = list(pool.map(_run_cell_safely, tasks))
    else:
        outcomes = [_run_cell_safely((config, cell, run_id, run_dir, None)) for cell in cells]

    rows = [row for row, _ in outcomes if row is not None]
    failures = [failure for _, failure in outcomes if failure is not None]
    summary, cell_frame = write_summary(run_dir, rows, failures)
    if failures:
        logger.warning(f"Run {run_id}: {len(failures)} of {len(cells)} cell(s) failed; see failures.json")
    return SweepOutcome(run_dir=run_dir, summary=summary, cells=cell_frame, failures=failures)


def report(run_dir: Union[str, Path]) -> pd.DataFrame:
    """Recompute summary.csv from the per-cell metrics files"""
    run_dir = Path(run_dir)
    metrics_files = sorted((run_dir / "cells").glob("*/metrics.csv"))
    if not metrics_files:
        raise ValidationError(f"No cell metrics under {run_dir / 'cells'}")

    rows = []
    for path in metrics_files:
        metrics = pd.read_csv(path)
        first = metrics.iloc[0]
        rows.append({
            "cell": path.parent.name,
            "T": float(first["T"]),
            "S": float(first["S"]),
            "method": str(first["method"]),
            "replicate": int(first["replicate"]),
            "final_cooperation": final_cooperation(metrics),
        })
    summary = sweep_summary(pd.DataFrame(rows))
    summary.to_csv(run_dir / "summary.csv", index=False)
    logger.info(f"Summary of {len(rows)} cell(s) written to {run_dir / 'summary.csv'}")
    return summary
