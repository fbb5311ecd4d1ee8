"""
Metrics Module
Cooperation levels, strategy-conditioned statistics and the per-cell metrics sink
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from src.agents.episode import EpisodeResult
from src.agents.learner import Trajectory
from src.core.games import DilemmaAction
from src.error_handling import NumericalError, ValidationError

logger = logging.getLogger(__name__)

STREAM_COLUMNS = ["run_id", "arena", "episode", "step", "metric", "value"]
CONDITIONED_COLUMNS = ["reward_C", "reward_D", "reputation_C", "reputation_D"]


def measure_cooperation(actions: np.ndarray) -> float:
    """Fraction of agents whose action is C"""
    actions = np.asarray(actions)
    if actions.size == 0:
        return float("nan")
    return float(np.mean(actions == DilemmaAction.COOPERATE.value))


def strategy_conditioned_stats(archives: Sequence[Trajectory]) -> pd.DataFrame:
    """Per-step mean reward and reputation of cooperators and defectors

    Steps are aligned by their index within the episode across archives.
    Empty conditionals are NaN, never zero.
    """
    if len(archives) == 0:
        raise ValidationError("strategy_conditioned_stats needs at least one trajectory")

    frames = []
    for traj in archives:
        steps, n = traj.actions.shape
        frames.append(pd.DataFrame({
            "step": np.repeat(np.arange(steps), n),
            "action": np.where(traj.actions.ravel() == DilemmaAction.COOPERATE.value, "C", "D"),
            "reward": traj.rewards.ravel(),
            "reputation": traj.reputations[1:].ravel(),
        }))
    data = pd.concat(frames, ignore_index=True)

    grouped = data.groupby(["step", "action"])[["reward", "reputation"]].mean().unstack("action")
    grouped = grouped.reindex(
        index=pd.RangeIndex(data["step"].max() + 1, name="step"),
        columns=pd.MultiIndex.from_product([["reward", "reputation"], ["C", "D"]]),
    )
    grouped.columns = [f"{metric}_{action}" for metric, action in grouped.columns]
    return grouped[CONDITIONED_COLUMNS]


@dataclass
class MetricsRecord:
    """One row of metrics.csv: one episode of one cell, averaged over arenas"""
    run_id: str
    method: str
    T: float
    S: float
    replicate: int
    episode: int
    cooperation: float
    final_step_cooperation: float
    mean_reward: float
    mean_env_reward: float
    mean_reputation: float
    reward_C: float
    reward_D: float
    reputation_C: float
    reputation_D: float
    losses: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        row = asdict(self)
        losses = row.pop("losses")
        row.update({key.replace("/", "_"): value for key, value in sorted(losses.items())})
        return row


def _nanmean(values: np.ndarray) -> float:
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else float("nan")


def episode_statistics(result: EpisodeResult) -> Dict[str, float]:
    """Scalars summarising one arena's episode"""
    traj = result.trajectory
    conditioned = strategy_conditioned_stats([traj])
    stats = {
        "cooperation": float(traj.cooperation().mean()),
        "final_step_cooperation": measure_cooperation(traj.actions[-1]),
        "mean_reward": float(traj.rewards.mean()),
        "mean_env_reward": float(traj.env_rewards.mean()),
        "mean_reputation": _nanmean(traj.reputations[1:].ravel()),
    }
    for column in CONDITIONED_COLUMNS:
        stats[column] = _nanmean(conditioned[column].to_numpy())
    return stats


class MetricsSink:
    """Collects per-episode records and the long per-step stream of one cell"""

    def __init__(self, run_id: str, method: str, T: float, S: float, replicate: int = 0):
        self.run_id = run_id
        self.method = method
        self.T = T
        self.S = S
        self.replicate = replicate
        self.episodes: List[Dict[str, float]] = []
        self.stream: List[Dict] = []
        self.alerts: List[Dict] = []
        self._final_cooperation: Dict[int, float] = {}

    def track_episode(self, arena: int, episode: int, result: EpisodeResult):
        stats = episode_statistics(result)
        stats.update({f"loss:{k}": v for k, v in result.diagnostics.items()})
        for key, value in stats.items():
            if key.startswith("loss:") and not np.isfinite(value):
                raise NumericalError(f"Arena {arena} episode {episode}: diagnostic {key[5:]} is {value}")
        previous = self._final_cooperation.get(arena)
        if previous is not None and previous > 0.0 and stats["final_step_cooperation"] == 0.0:
            self.create_alert("COLLAPSE", f"Arena {arena} episode {episode} ended in full defection "
                                          f"after {previous:.0%} cooperation")
        self._final_cooperation[arena] = stats["final_step_cooperation"]
        self.episodes.append({"arena": arena, "episode": episode, **stats})

    def track_steps(self, arena: int, episode: int, traj: Trajectory):
        for t in range(traj.steps):
            self.stream.append(self._stream_row(arena, episode, t, "cooperation", measure_cooperation(traj.actions[t])))
            reputations = traj.reputations[t + 1]
            if not np.all(np.isnan(reputations)):
                self.stream.append(self._stream_row(arena, episode, t, "mean_reputation", float(reputations.mean())))

    def _stream_row(self, arena: int, episode: int, step: int, metric: str, value: float) -> Dict:
        return {"run_id": self.run_id, "arena": arena, "episode": episode, "step": step,
                "metric": metric, "value": value}

    def absorb(self, episodes: Sequence[Dict], stream: Sequence[Dict]):
        """Fold in rows collected by an arena worker"""
        self.episodes.extend(episodes)
        self.stream.extend(stream)

    def create_alert(self, alert_type: str, message: str):
        self.alerts.append({"type": alert_type, "message": message})
        logger.warning(f"Metrics alert {alert_type}: {message}")

    def records(self) -> List[MetricsRecord]:
        """Arena-averaged record per episode"""
        if not self.episodes:
            return []
        frame = pd.DataFrame(self.episodes).drop(columns="arena")
        averaged = frame.groupby("episode", sort=True).mean()
        records = []
        for episode, row in averaged.iterrows():
            losses = {k[5:]: float(v) for k, v in row.items() if k.startswith("loss:")}
            records.append(MetricsRecord(
                run_id=self.run_id, method=self.method, T=self.T, S=self.S, replicate=self.replicate,
                episode=int(episode),
                cooperation=float(row["cooperation"]),
                final_step_cooperation=float(row["final_step_cooperation"]),
                mean_reward=float(row["mean_reward"]),
                mean_env_reward=float(row["mean_env_reward"]),
                mean_reputation=float(row["mean_reputation"]),
                reward_C=float(row["reward_C"]),
                reward_D=float(row["reward_D"]),
                reputation_C=float(row["reputation_C"]),
                reputation_D=float(row["reputation_D"]),
                losses=losses,
            ))
        return records

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.as_row() for record in self.records()])

    def stream_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.stream, columns=STREAM_COLUMNS)

    def export(self, cell_dir: Union[str, Path]) -> Path:
        """Write metrics.csv and stream.csv into cell_dir"""
        cell_dir = Path(cell_dir)
        cell_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_frame().to_csv(cell_dir / "metrics.csv", index=False)
        self.stream_frame().to_csv(cell_dir / "stream.csv", index=False)
        logger.info(f"Metrics exported to {cell_dir}")
        return cell_dir
