"""
Arena Runtime
Runs independent population replicates (arenas) through episodes with sharded learners
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.agents.episode import EpisodeSettings, lr2_episode
from src.agents.learner import Hyperparameters
from src.agents.population import Method, MethodSpec, Population, init_population
from src.core.games import PayoffMatrix
from src.core.topology import NeighborGraph, TopologyKind, build_graph
from src.error_handling import ConfigurationError
from src.experiments.snapshot import export_snapshot
from src.ml.checkpoint import dump_text, save_blob
from src.runtime.metrics import MetricsSink
from src.utils.seeding import Stream, stream_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TopologySpec:
    kind: TopologyKind = TopologyKind.LATTICE_VON_NEUMANN
    side: Optional[int] = 10
    n_agents: Optional[int] = None
    group_size: Optional[int] = None
    resample_each_step: bool = True


@dataclass(frozen=True)
class ArenaConfig:
    """Arena schedule and parallelism; one root seed drives every arena"""
    n_arenas: int = 1
    episodes: int = 2000
    timesteps_per_episode: int = 20
    seed: int = 0
    n_agents: Optional[int] = None
    learner_workers: int = 1
    workers: int = 1
    log_every: int = 100
    stream_every: int = 100
    checkpoint_every: int = 0
    checkpoint_text: bool = False
    snapshot_episodes: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_arenas < 1 or self.episodes < 1 or self.timesteps_per_episode < 1:
            raise ConfigurationError("Arena counts, episodes and timesteps must all be at least 1")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.timesteps_per_episode


@dataclass
class TrainingJob:
    """Everything one training run needs; picklable for process workers"""
    run_id: str
    game: PayoffMatrix
    T: float
    S: float
    spec: MethodSpec
    hyperparameters: Hyperparameters
    settings: EpisodeSettings
    arena: ArenaConfig
    topology: TopologySpec
    replicate: int = 0
    adversarial_fraction: float = 0.0
    output_dir: Optional[Path] = None


@dataclass
class ArenaOutcome:
    arena: int
    population: Population
    episodes: List[Dict] = field(default_factory=list)
    stream: List[Dict] = field(default_factory=list)


@dataclass
class TrainingResult:
    populations: List[Population]
    sink: MetricsSink
    elapsed: float


def build_arena_graph(job: TrainingJob, arena: int) -> NeighborGraph:
    topology = job.topology
    graph_seed = int(stream_seed(job.arena.seed, Stream.TOPOLOGY, arena).generate_state(1)[0])
    graph = build_graph(
        topology.kind, side=topology.side, n_agents=topology.n_agents, group_size=topology.group_size,
        seed=graph_seed, resample_each_step=topology.resample_each_step,
        steps_per_round=job.settings.steps,
    )
    if job.arena.n_agents is not None and job.arena.n_agents != graph.n_agents:
        raise ConfigurationError(
            f"Population of {job.arena.n_agents} agents does not fit a {topology.kind.value} "
            f"topology with {graph.n_agents} sites"
        )
    return graph


def learning_horizons(job: TrainingJob) -> Tuple[int, int]:
    """Total optimizer steps of the dilemma and evaluation parameters"""
    h = job.hyperparameters
    episodes = job.arena.episodes
    if h.dilemma_update == "reinforce":
        return episodes, episodes
    minibatches = math.ceil(job.settings.steps / h.minibatch_size)
    return episodes * h.ppo_epochs * minibatches, episodes


def save_checkpoint(population: Population, directory: Path, text: bool = False) -> Path:
    """One blob per agent and parameter set"""
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(population.n_agents):
        save_blob(population.theta.select(i), directory / f"agent{i:04d}_theta.lr2p")
        if population.eta is not None:
            save_blob(population.eta.select(i), directory / f"agent{i:04d}_eta.lr2p")
        if text:
            dump_text(population.theta.select(i), directory / f"agent{i:04d}_theta.txt")
    return directory


def run_arena(job: TrainingJob, arena: int) -> ArenaOutcome:
    """Train one independent population through every episode"""
    cfg = job.arena
    graph = build_arena_graph(job, arena)
    theta_horizon, eta_horizon = learning_horizons(job)
    population = init_population(
        graph.n_agents, graph.degree, job.spec, job.hyperparameters.beta, job.hyperparameters.learning_rate,
        theta_horizon, eta_horizon, cfg.seed, arena, job.adversarial_fraction,
    )
    sink = MetricsSink(job.run_id, job.spec.label, job.T, job.S, job.replicate)
    executor = ThreadPoolExecutor(max_workers=cfg.learner_workers) if cfg.learner_workers > 1 else None
    snapshot_ok = graph.kind.is_lattice and job.spec.method is not Method.DD

    try:
        for episode in range(cfg.episodes):
            result = lr2_episode(
                population, graph, job.game, job.hyperparameters, job.settings,
                cfg.seed, arena, episode, cfg.episodes, executor,
            )
            population = result.population
            sink.track_episode(arena, episode, result)
            done = episode + 1

            if episode % cfg.stream_every == 0 or done == cfg.episodes:
                sink.track_steps(arena, episode, result.trajectory)
            if episode % cfg.log_every == 0 or done == cfg.episodes:
                logger.info(
                    f"[{job.run_id}] arena {arena} episode {done}/{cfg.episodes}: "
                    f"cooperation {sink.episodes[-1]['cooperation']:.3f}"
                )
            logger.debug(f"Arena {arena} episode {episode} diagnostics: {result.diagnostics}")

            if job.output_dir is not None and arena == 0 and snapshot_ok and done in cfg.snapshot_episodes:
                traj = result.trajectory
                export_snapshot(
                    traj.actions[-1], traj.reputations[-1], done * cfg.timesteps_per_episode,
                    job.output_dir / "snapshots" / f"episode{done:06d}.txt",
                    graph, job.T, job.S, cfg.seed,
                )
            if job.output_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_checkpoint(
                    population, job.output_dir / "checkpoints" / f"arena{arena:02d}" / f"episode{done:06d}",
                    cfg.checkpoint_text,
                )
    finally:
        if executor is not None:
            executor.shutdown()

    return ArenaOutcome(arena=arena, population=population, episodes=sink.episodes, stream=sink.stream)


def _run_arena_star(args: Tuple[TrainingJob, int]) -> ArenaOutcome:
    return run_arena(*args)


def run_training(job: TrainingJob) -> TrainingResult:
    """All arenas of one run; metrics are averaged over arenas per episode"""
    cfg = job.arena
    if job.settings.steps != cfg.timesteps_per_episode:
        raise ConfigurationError(
            f"Episode settings use {job.settings.steps} steps but the arena schedule has {cfg.timesteps_per_episode}"
        )
    start = time.time()
    logger.info(
        f"[{job.run_id}] training {job.spec.label} at T={job.T}, S={job.S}: {cfg.n_arenas} arena(s) x "
        f"{cfg.episodes} episodes x {cfg.timesteps_per_episode} steps ({cfg.total_steps} in total)"
    )

    tasks = [(job, arena) for arena in range(cfg.n_arenas)]
    if cfg.workers > 1 and cfg.n_arenas > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.n_arenas)) as pool:
            outcomes = list(pool.map(_run_arena_star, tasks))
    else:
        outcomes = [_run_arena_star(task) for task in tasks]

    sink = MetricsSink(job.run_id, job.spec.label, job.T, job.S, job.replicate)
    for outcome in sorted(outcomes, key=lambda o: o.arena):
        sink.absorb(outcome.episodes, outcome.stream)
    if job.output_dir is not None:
        sink.export(job.output_dir)

    elapsed = time.time() - start
    logger.info(f"[{job.run_id}] finished in {elapsed:.1f}s")
    return TrainingResult(populations=[o.population for o in outcomes], sink=sink, elapsed=elapsed)
