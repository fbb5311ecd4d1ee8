"""
Integration tests for episode orchestration
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from src.agents.episode import EpisodeSettings, learner_shards, lr2_episode, rollout
from src.agents.learner import Hyperparameters
from src.agents.population import MethodSpec, init_population
from src.core.topology import build_well_mixed
from src.utils.seeding import Stream, rng_for

pytestmark = pytest.mark.integration


def _rollout(population, graph, game, settings, seed=0):
    return rollout(
        population, population.theta, population.eta, graph, game, settings,
        population.last_actions, population.reputations, 0,
        rng_for(seed, Stream.ACT, 0, 0), rng_for(seed, Stream.ASSESS, 0, 0),
    )


def test_trajectory_shapes(make_population, lattice, game, settings):
    """Test a rollout records every phase for every step"""
    traj = _rollout(make_population("lr2"), lattice, game, settings)
    assert traj.steps == 4
    assert traj.actions.shape == (4, 9)
    assert traj.dilemma_obs.shape == (4, 9, 5)
    assert traj.eval_obs.shape == (4, 9, 8)
    assert traj.assessment_probs.shape == (4, 9, 4)
    assert traj.reputations.shape == (5, 9)
    assert traj.bootstrap_values.shape == (9,)
    assert np.all((traj.reputations >= 0) & (traj.reputations <= 1))


def test_initial_actions_are_played_first(make_population, lattice, game, settings):
    """Test the t = 0 actions are the forced start actions and assessors observe them"""
    population = make_population("lr2")
    runs = {}
    for label, start in (("C", np.zeros(9, dtype=np.int64)), ("D", np.ones(9, dtype=np.int64))):
        runs[label] = rollout(
            population, population.theta, population.eta, lattice, game, settings,
            start, population.reputations, 0,
            rng_for(0, Stream.ACT, 0, 0), rng_for(0, Stream.ASSESS, 0, 0),
        )
    cooperators, defectors = runs["C"], runs["D"]

    assert np.all(cooperators.actions[0] == 0)
    assert np.all(defectors.actions[0] == 1)
    assert np.all(cooperators.eval_obs[0, :, :4] == 1.0)
    assert np.all(defectors.eval_obs[0, :, :4] == 0.0)
    assert not np.array_equal(cooperators.reputations[1], defectors.reputations[1])
    assert cooperators.policy_mask().tolist() == [0.0, 1.0, 1.0, 1.0]


def test_continued_episode_samples_every_action(make_population, lattice, game, settings):
    """Test an unforced start ignores the carried actions when the population keeps reputations"""
    population = make_population("lr2")
    runs = [
        rollout(
            population, population.theta, population.eta, lattice, game, settings,
            np.full(9, action, dtype=np.int64), population.reputations, 0,
            rng_for(0, Stream.ACT, 0, 0), rng_for(0, Stream.ASSESS, 0, 0), forced_start=False,
        )
        for action in (0, 1)
    ]
    assert np.array_equal(runs[0].actions, runs[1].actions)
    assert runs[0].forced_steps == 0


def test_episode_starts_from_the_reset_draw(make_population, lattice, game, hyperparameters, settings):
    """Test a reset episode plays the seeded random C/D start, in both rollouts"""
    result = lr2_episode(make_population("lr2"), lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=2, n_episodes=3)
    expected = (rng_for(0, Stream.EPISODE_RESET, 0, 2).random(9) < 0.5).astype(np.int64)
    assert np.array_equal(result.trajectory.actions[0], expected)
    assert np.array_equal(result.lookahead.actions[0], expected)
    assert result.trajectory.forced_steps == result.lookahead.forced_steps == 1


def test_episode_length_twenty(make_population, lattice, game):
    """Test the default episode has 20 timesteps"""
    traj = _rollout(make_population("lr2"), lattice, game, EpisodeSettings())
    assert traj.steps == 20


def test_image_score_all_cooperate(make_population, always_cooperate, lattice, game):
    """Test all-C under image scoring drives reputations to 1 and rewards to degree x R"""
    population = always_cooperate(make_population("norm:is"))
    traj = _rollout(population, lattice, game, EpisodeSettings(steps=20))
    assert np.all(traj.actions == 0)
    assert np.all(traj.env_rewards == 4.0)
    np.testing.assert_allclose(traj.reputations[-1], 1.0, atol=1e-5)
    np.testing.assert_allclose(traj.rewards[-1], 4.0, atol=1e-4)


def test_learned_assessment_reputation_update(make_population, lattice, game, settings):
    """Test each step's reputation is the running average of received assessments"""
    traj = _rollout(make_population("lr2"), lattice, game, settings)
    for t in range(traj.steps):
        expected = 0.5 * traj.reputations[t] + 0.5 * traj.received[t].mean(axis=1)
        np.testing.assert_allclose(traj.reputations[t + 1], expected, atol=1e-12)


def test_hard_assessments_use_bits(make_population, lattice, game):
    """Test hard mode routes sampled bits into the reputation update"""
    traj = _rollout(make_population("lr2"), lattice, game, EpisodeSettings(steps=4, hard_assessments=True))
    assert set(np.unique(traj.received)).issubset({0.0, 1.0})
    assert not np.array_equal(traj.received, traj.received_probs)


def test_dd_skips_reputation_phase(make_population, lattice, game, hyperparameters, settings):
    """Test dd keeps no reputations and trains on environmental rewards"""
    result = lr2_episode(make_population("dd"), lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=0, n_episodes=5)
    traj = result.trajectory
    assert result.lookahead is None
    assert not traj.has_assessments
    assert np.all(np.isnan(traj.reputations))
    assert np.array_equal(traj.rewards, traj.env_rewards)
    assert result.population.eta is None


def test_norm_episode_updates_only_dilemma_policy(make_population, lattice, game, hyperparameters, settings):
    """Test predefined norms never build or train an evaluation network"""
    population = make_population("norm:sj")
    result = lr2_episode(population, lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=0, n_episodes=5)
    assert result.lookahead is None
    assert result.population.eta is None
    assert not np.array_equal(result.population.theta.values, population.theta.values)
    assert "evaluation/objective" not in result.diagnostics


def test_lr2_episode_updates_both_policies(make_population, lattice, game, hyperparameters, settings):
    """Test one LR2 episode moves theta and eta and reports diagnostics"""
    population = make_population("lr2")
    result = lr2_episode(population, lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=0, n_episodes=5)
    assert result.lookahead is not None
    assert result.lookahead.steps == settings.steps
    assert not np.array_equal(result.population.theta.values, population.theta.values)
    assert not np.array_equal(result.population.eta.values, population.eta.values)
    assert result.population.theta_optimizer.step == hyperparameters.ppo_epochs * 2
    assert result.population.eta_optimizer.step == 1
    for key in ("dilemma/policy_loss", "dilemma/value_loss", "dilemma/entropy", "evaluation/objective",
                "evaluation/disagreement", "evaluation/grad_norm"):
        assert np.isfinite(result.diagnostics[key])


def test_lookahead_starts_from_the_same_state(make_population, lattice, game, hyperparameters, settings):
    """Test the look-ahead rollout shares the episode's initial reputations"""
    result = lr2_episode(make_population("lr2"), lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=3, n_episodes=5)
    assert np.array_equal(result.lookahead.reputations[0], result.trajectory.reputations[0])
    assert result.lookahead.start_step == result.trajectory.start_step == 3 * settings.steps


def test_ippo_matches_selfish_lr2(make_population, lattice, game, settings):
    """Test IPPO and LR2 with beta = 1, mu = 0 take identical steps"""
    selfish = Hyperparameters(beta=1.0, mu=0.0, ppo_epochs=1, minibatch_size=2)
    lr2 = make_population("lr2", beta=1.0)
    ippo = make_population("ippo", beta=1.0)

    for episode in range(2):
        a = lr2_episode(lr2, lattice, game, selfish, settings, seed=0, arena=0, episode=episode, n_episodes=2)
        b = lr2_episode(ippo, lattice, game, replace(selfish, beta=0.6, mu=0.2), settings,
                        seed=0, arena=0, episode=episode, n_episodes=2)
        assert np.array_equal(a.trajectory.actions, b.trajectory.actions)
        assert np.array_equal(a.trajectory.rewards, b.trajectory.rewards)
        assert np.array_equal(a.trajectory.rewards, a.trajectory.env_rewards)
        assert np.array_equal(a.population.theta.values, b.population.theta.values)
        assert np.array_equal(b.population.eta.values, ippo.eta.values)
        lr2, ippo = a.population, b.population


def test_learner_shards_partition_agents():
    """Test modulo sharding covers every agent once"""
    shards = learner_shards(10, 3)
    assert [s.tolist() for s in shards] == [[0, 3, 6, 9], [1, 4, 7], [2, 5, 8]]
    assert len(learner_shards(2, 5)) == 2


def test_sharded_learners_match_single_learner(make_population, lattice, game, hyperparameters):
    """Test results and diagnostics do not depend on learner count or thread workers"""
    population = make_population("lr2")
    single = lr2_episode(population, lattice, game, hyperparameters, EpisodeSettings(steps=4, learners=1),
                         seed=1, arena=0, episode=0, n_episodes=3)
    with ThreadPoolExecutor(max_workers=3) as executor:
        sharded = lr2_episode(population, lattice, game, hyperparameters, EpisodeSettings(steps=4, learners=3),
                              seed=1, arena=0, episode=0, n_episodes=3, executor=executor)

    assert np.array_equal(sharded.population.theta.values, single.population.theta.values)
    assert np.array_equal(sharded.population.eta.values, single.population.eta.values)
    assert sharded.diagnostics == single.diagnostics


def test_episode_reset_redraws_start_state(make_population, lattice, game, hyperparameters, settings):
    """Test later episodes start from a fresh seeded state"""
    population = make_population("lr2")
    first = lr2_episode(population, lattice, game, hyperparameters, settings,
                        seed=0, arena=0, episode=0, n_episodes=3)
    second = lr2_episode(first.population, lattice, game, hyperparameters, settings,
                         seed=0, arena=0, episode=1, n_episodes=3)
    assert np.array_equal(first.trajectory.reputations[0], population.reputations)
    assert not np.array_equal(second.trajectory.reputations[0], first.population.reputations)

    carried = lr2_episode(first.population, lattice, game, hyperparameters, replace(settings, reset_each_episode=False),
                          seed=0, arena=0, episode=1, n_episodes=3)
    assert np.array_equal(carried.trajectory.reputations[0], first.population.reputations)


def test_well_mixed_episode(make_population, game, hyperparameters, settings):
    """Test LR2 on a resampled well-mixed population"""
    graph = build_well_mixed(10, 4, seed=2)
    population = init_population(10, 4, MethodSpec.parse("lr2"), 0.6, 3e-4, 100, 10, seed=0)
    result = lr2_episode(population, graph, game, hyperparameters, settings,
                         seed=0, arena=0, episode=0, n_episodes=2)
    assert not np.array_equal(result.trajectory.adjacency[0], result.trajectory.adjacency[1])
    assert np.all(np.isfinite(result.population.eta.values))
