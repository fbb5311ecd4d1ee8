"""
Shared fixtures: a 3x3 lattice, tiny populations and a tiny experiment config
"""

import copy

import numpy as np
import pytest

from src.agents.episode import EpisodeSettings
from src.agents.learner import Hyperparameters
from src.agents.population import MethodSpec, init_population
from src.config import build_config, set_path
from src.core.games import make_payoff_matrix
from src.core.topology import TopologyKind, build_lattice

TINY_TREE = {
    "game": {"T": 1.1, "S": -0.1},
    "topology": {"kind": "von_neumann", "side": 3},
    "method": {"name": "lr2"},
    "lr2": {"ppo_epochs": 1, "minibatch_size": 2},
    "arena": {"episodes": 10, "steps": 4, "seed": 7},
    "output": {"stream_every": 5},
    "logging": {"to_file": False, "every": 5},
}


@pytest.fixture
def lattice():
    return build_lattice(3, TopologyKind.LATTICE_VON_NEUMANN)


@pytest.fixture
def game():
    return make_payoff_matrix(1.1, -0.1)


@pytest.fixture
def hyperparameters():
    return Hyperparameters(ppo_epochs=1, minibatch_size=2)


@pytest.fixture
def settings():
    return EpisodeSettings(steps=4)


@pytest.fixture
def make_population(lattice):
    """Factory: make_population('lr2', beta=0.6, seed=3)"""
    def make(method: str = "lr2", beta: float = 0.6, seed: int = 3, adversarial_fraction: float = 0.0):
        return init_population(
            lattice.n_agents, lattice.degree, MethodSpec.parse(method), beta, 3e-4,
            theta_horizon=100, eta_horizon=10, seed=seed, adversarial_fraction=adversarial_fraction,
        )
    return make


@pytest.fixture
def always_cooperate():
    """Pushes every agent's policy bias far towards C and starts it from C"""
    def force(population):
        layout = population.theta.layout
        values = population.theta.values.copy()
        values[:, layout.span("policy.bias")] = np.array([50.0, -50.0])
        return population.evolve(
            theta=population.theta.with_values(values),
            last_actions=np.zeros(population.n_agents, dtype=np.int64),
        )
    return force


@pytest.fixture
def tiny_tree(tmp_path):
    tree = copy.deepcopy(TINY_TREE)
    tree["output"]["directory"] = str(tmp_path / "results")
    return tree


@pytest.fixture
def tiny_config(tiny_tree):
    """Factory: tiny_config({'arena.episodes': 3})"""
    def make(overrides=None):
        tree = copy.deepcopy(tiny_tree)
        for key, value in (overrides or {}).items():
            set_path(tree, key, value)
        return build_config(tree)
    return make
