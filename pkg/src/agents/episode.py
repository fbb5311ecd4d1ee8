"""
Episode Orchestration
Acting, assessment and reputation phases per timestep, then the per-episode learner barriers
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.agents.learner import (
    Hyperparameters,
    Trajectory,
    UpdateDiagnostics,
    action_observations,
    build_lookahead,
    dilemma_observations,
    dilemma_update,
    entropy_weight,
    evaluation_update,
    LookaheadContext,
    reshape_reward,
)
from src.agents.population import Method, Population
from src.core.games import PayoffMatrix, neighbour_payoffs, total_reward
from src.core.reputation import assess_learned, assess_norm_population, route_to_targets, update_reputations
from src.core.topology import NeighborGraph
from src.error_handling import LearnerError
from src.ml.networks import mlp_forward
from src.ml.optim import AdamState
from src.ml.parameters import ParameterVector
from src.utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeSettings:
    """Per-run episode constants"""
    steps: int = 20
    alpha: float = 0.5
    hard_assessments: bool = False
    reset_each_episode: bool = True
    learners: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise LearnerError(f"Episodes need at least one timestep, got {self.steps}")
        if self.learners < 1:
            raise LearnerError(f"Need at least one learner shard, got {self.learners}")


@dataclass
class EpisodeResult:
    population: Population
    trajectory: Trajectory
    lookahead: Optional[Trajectory] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)


def select_agents(traj: Trajectory, agents: np.ndarray) -> Trajectory:
    """Sub-trajectory along the agent axis; neighbour ids stay global"""
    def pick(array, axis=1):
        return None if array is None else np.take(array, agents, axis=axis)

    return Trajectory(
        adjacency=pick(traj.adjacency),
        dilemma_obs=pick(traj.dilemma_obs),
        actions=pick(traj.actions),
        log_probs=pick(traj.log_probs),
        values=pick(traj.values),
        bootstrap_values=pick(traj.bootstrap_values, axis=0),
        neighbour_payoffs=pick(traj.neighbour_payoffs),
        env_rewards=pick(traj.env_rewards),
        rewards=pick(traj.rewards),
        reputations=pick(traj.reputations),
        betas=pick(traj.betas, axis=0),
        eval_obs=pick(traj.eval_obs),
        assessment_probs=pick(traj.assessment_probs),
        assessment_bits=pick(traj.assessment_bits),
        received_probs=pick(traj.received_probs),
        received=pick(traj.received),
        start_step=traj.start_step,
        forced_steps=traj.forced_steps,
    )


def learner_shards(n_agents: int, learners: int) -> List[np.ndarray]:
    """Agent index modulo learner count"""
    return [np.arange(k, n_agents, learners) for k in range(min(learners, n_agents))]


def rollout(population: Population, theta: ParameterVector, eta: Optional[ParameterVector],
            graph: NeighborGraph, game: PayoffMatrix, settings: EpisodeSettings,
            initial_actions: np.ndarray, initial_reputations: np.ndarray, start_step: int,
            act_rng: np.random.Generator, assess_rng: np.random.Generator,
            forced_start: bool = True) -> Trajectory:
    """Play one episode of settings.steps timesteps without learning

    With forced_start the t = 0 actions are initial_actions, so assessors
    see them as each neighbour's last action; later actions come from theta.
    Without it the episode continues a previous one and every action is
    sampled from theta.
    """
    method = population.spec.method
    n, steps = population.n_agents, settings.steps
    keeps_reputation = method.uses_reputation

    rec: Dict[str, list] = {key: [] for key in (
        "adjacency", "obs", "actions", "log_probs", "values", "payoffs", "env", "rewards", "reputations",
        "eval_obs", "probs", "bits", "received_probs", "received")}

    reputations = np.asarray(initial_reputations, dtype=np.float64).copy()
    previous_actions = np.asarray(initial_actions, dtype=np.int64).copy()
    rec["reputations"].append(reputations.copy() if keeps_reputation else np.full(n, np.nan))
    last_received = np.repeat(reputations[:, None], population.degree, axis=1)

    for t in range(steps):
        adjacency = graph.adjacency_at(start_step + t)
        if keeps_reputation:
            obs = dilemma_observations(reputations, adjacency)
        else:
            obs = action_observations(previous_actions, adjacency)

        # phase 1: act and collect environmental rewards
        out = mlp_forward(theta, obs[:, None, :])
        probs = out.policy_probs()[:, 0, :]
        logits = out.logits.value[:, 0, :]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        sampled = (act_rng.random(n) < probs[:, 1]).astype(np.int64)
        actions = np.asarray(initial_actions, dtype=np.int64).copy() if forced_start and t == 0 else sampled
        payoffs = neighbour_payoffs(actions, adjacency, game)
        env = total_reward(payoffs)

        rec["adjacency"].append(adjacency)
        rec["obs"].append(obs)
        rec["actions"].append(actions)
        rec["log_probs"].append(log_probs[np.arange(n), actions])
        rec["values"].append(out.values()[:, 0])
        rec["payoffs"].append(payoffs)
        rec["env"].append(env)

        if not keeps_reputation:
            rec["rewards"].append(env)
            rec["reputations"].append(np.full(n, np.nan))
            previous_actions = actions
            continue

        # phase 2: assess neighbours and update reputations
        eval_obs = np.concatenate([(actions[adjacency] == 0).astype(np.float64), last_received], axis=1)
        if method is Method.NORM:
            given = assess_norm_population(population.spec.norm, actions, reputations, adjacency)
            given_probs, given_bits = given, given.astype(np.int64)
        else:
            given_probs, given_bits = assess_learned(eta, eval_obs, assess_rng)

        received_probs = route_to_targets(given_probs, adjacency)
        received = route_to_targets(given_bits.astype(np.float64), adjacency) if settings.hard_assessments else received_probs
        reputations = update_reputations(reputations, received, settings.alpha)

        rec["eval_obs"].append(eval_obs)
        rec["probs"].append(given_probs)
        rec["bits"].append(given_bits)
        rec["received_probs"].append(received_probs)
        rec["received"].append(received)
        rec["reputations"].append(reputations.copy())
        rec["rewards"].append(reshape_reward(env, reputations, population.betas))
        last_received = received
        previous_actions = actions

    next_adjacency = graph.adjacency_at(start_step + steps)
    if keeps_reputation:
        final_obs = dilemma_observations(reputations, next_adjacency)
    else:
        final_obs = action_observations(previous_actions, next_adjacency)
    bootstrap = mlp_forward(theta, final_obs[:, None, :]).values()[:, 0]

    def stacked(key):
        return np.stack(rec[key]) if rec[key] else None

    return Trajectory(
        adjacency=stacked("adjacency"),
        dilemma_obs=stacked("obs"),
        actions=stacked("actions"),
        log_probs=stacked("log_probs"),
        values=stacked("values"),
        bootstrap_values=bootstrap,
        neighbour_payoffs=stacked("payoffs"),
        env_rewards=stacked("env"),
        rewards=stacked("rewards"),
        reputations=stacked("reputations"),
        betas=population.betas.copy(),
        eval_obs=stacked("eval_obs"),
        assessment_probs=stacked("probs"),
        assessment_bits=stacked("bits"),
        received_probs=stacked("received_probs"),
        received=stacked("received"),
        start_step=start_step,
        forced_steps=1 if forced_start else 0,
    )


def _scatter_params(full: ParameterVector, parts: Sequence[Tuple[np.ndarray, ParameterVector]]) -> ParameterVector:
    values = full.values.copy()
    for agents, part in parts:
        values[agents] = part.values
    return full.with_values(values)


def _scatter_optimizer(full: AdamState, parts: Sequence[Tuple[np.ndarray, AdamState]]) -> AdamState:
    m, v = full.m.copy(), full.v.copy()
    step = full.step
    for agents, part in parts:
        m[agents] = part.m
        v[agents] = part.v
        step = part.step
    return replace(full, m=m, v=v, step=step)


def _merge_diagnostics(n_agents: int, parts: Sequence[Tuple[np.ndarray, UpdateDiagnostics]]) -> Dict[str, float]:
    """Population means over agents in index order, whatever the shard layout"""
    merged = UpdateDiagnostics()
    for agents, part in parts:
        for key, values in part.per_agent.items():
            merged.per_agent.setdefault(key, np.zeros(n_agents))[agents] = values
        merged.shared.update(part.shared)
    return merged.summary()


def _map(executor: Optional[Executor], fn, items):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def lr2_episode(population: Population, graph: NeighborGraph, game: PayoffMatrix, h: Hyperparameters,
                settings: EpisodeSettings, seed: int, arena: int, episode: int, n_episodes: int,
                executor: Optional[Executor] = None) -> EpisodeResult:
    """Act, assess and update reputations for every step, then run the learner barriers"""
    n = population.n_agents
    method = population.spec.method
    if method is Method.IPPO:
        h = replace(h, beta=1.0, mu=0.0)

    forced_start = settings.reset_each_episode or episode == 0
    if settings.reset_each_episode and episode > 0:
        reset_rng = rng_for(seed, Stream.EPISODE_RESET, arena, episode)
        initial_actions = (reset_rng.random(n) < 0.5).astype(np.int64)
        initial_reputations = reset_rng.random(n)
    else:
        initial_actions = population.last_actions
        initial_reputations = population.reputations
    start_step = episode * settings.steps

    traj = rollout(
        population, population.theta, population.eta, graph, game, settings,
        initial_actions, initial_reputations, start_step,
        rng_for(seed, Stream.ACT, arena, episode), rng_for(seed, Stream.ASSESS, arena, episode), forced_start,
    )

    shards = learner_shards(n, settings.learners)
    omega = entropy_weight(h, episode, n_episodes)
    lookahead_rate = population.theta_optimizer.effective_rate()

    def update_dilemma(agents):
        theta, optimizer, diagnostics = dilemma_update(
            population.theta.select(agents), population.theta_optimizer.select(agents),
            select_agents(traj, agents), h, omega, rng_for(seed, Stream.MINIBATCH, arena, episode),
        )
        return agents, theta, optimizer, diagnostics

    dilemma_results = _map(executor, update_dilemma, shards)
    theta_hat = _scatter_params(population.theta, [(r[0], r[1]) for r in dilemma_results])
    theta_optimizer = _scatter_optimizer(population.theta_optimizer, [(r[0], r[2]) for r in dilemma_results])
    diagnostics = _merge_diagnostics(n, [(r[0], r[3]) for r in dilemma_results])

    updated = population.evolve(theta=theta_hat, theta_optimizer=theta_optimizer, last_actions=traj.actions[-1])
    if method.uses_reputation:
        updated = updated.evolve(reputations=traj.reputations[-1])

    if not method.learns_evaluation:
        return EpisodeResult(population=updated, trajectory=traj, diagnostics=diagnostics)

    # online cross-validation: same start state, updated dilemma policies, unchanged assessors
    lookahead = rollout(
        population, theta_hat, population.eta, graph, game, settings,
        initial_actions, initial_reputations, start_step,
        rng_for(seed, Stream.LOOKAHEAD_ACT, arena, episode), rng_for(seed, Stream.LOOKAHEAD_ASSESS, arena, episode),
        forced_start,
    )

    def sensitivities(agents):
        context = build_lookahead(
            population.theta.select(agents), theta_hat.select(agents),
            select_agents(traj, agents), select_agents(lookahead, agents),
            h, settings.alpha, lookahead_rate,
        )
        return agents, context.sensitivity

    sensitivity = np.zeros((n, settings.steps, settings.steps))
    for agents, part in _map(executor, sensitivities, shards):
        sensitivity[agents] = part
    context = LookaheadContext(sensitivity=sensitivity, learning_rate=lookahead_rate)

    def update_evaluation(agents):
        eta, optimizer, diagnostics = evaluation_update(
            population.eta.select(agents), population.eta_optimizer.select(agents),
            traj, lookahead, context, h, agents=agents,
            static_topology=graph.kind.is_lattice,
        )
        return agents, eta, optimizer, diagnostics

    evaluation_results = _map(executor, update_evaluation, shards)
    eta_hat = _scatter_params(population.eta, [(r[0], r[1]) for r in evaluation_results])
    eta_optimizer = _scatter_optimizer(population.eta_optimizer, [(r[0], r[2]) for r in evaluation_results])
    diagnostics.update(_merge_diagnostics(n, [(r[0], r[3]) for r in evaluation_results]))
    diagnostics["lookahead/cooperation"] = float(lookahead.cooperation().mean())

    updated = updated.evolve(eta=eta_hat, eta_optimizer=eta_optimizer)
    return EpisodeResult(population=updated, trajectory=traj, lookahead=lookahead, diagnostics=diagnostics)
