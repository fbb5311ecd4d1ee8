"""
Tests for agent populations, checkpoints and the seed ladder
"""

import numpy as np
import pytest

from src.agents.population import AgentVariant, Method, MethodSpec, init_population
from src.core.reputation import SocialNorm
from src.error_handling import AutodiffError, ConfigurationError, ReputationError, handle_error
from src.ml.checkpoint import dump_text, load_blob, save_blob
from src.utils.seeding import Stream, rng_for

pytestmark = pytest.mark.unit


def test_method_spec_parse():
    """Test method strings and their labels"""
    assert MethodSpec.parse("lr2") == MethodSpec(Method.LR2)
    spec = MethodSpec.parse(" Norm:IS ")
    assert spec.method is Method.NORM
    assert spec.norm is SocialNorm.IMAGE_SCORE
    assert spec.label == "norm:is"


@pytest.mark.parametrize("text", ["norm", "ppo", ""])
def test_method_spec_rejects_unknown(text):
    """Test unknown methods and bare norm raise"""
    with pytest.raises(ConfigurationError):
        MethodSpec.parse(text)


def test_unknown_norm_tag():
    """Test unknown norm tags raise"""
    with pytest.raises(ReputationError):
        MethodSpec.parse("norm:xx")


def test_lr2_population(make_population):
    """Test stacked parameters, reputations in [0, 1] and C/D initial actions"""
    population = make_population("lr2")
    assert population.n_agents == 9
    assert population.theta.values.shape[0] == 9
    assert population.eta.values.shape[0] == 9
    assert np.all((population.reputations >= 0) & (population.reputations <= 1))
    assert set(np.unique(population.last_actions)).issubset({0, 1})
    assert np.all(population.betas == 0.6)
    assert all(v is AgentVariant.LR2 for v in population.variants)


def test_ippo_population_is_selfish(make_population):
    """Test IPPO agents use beta = 1"""
    assert np.all(make_population("ippo", beta=0.6).betas == 1.0)


@pytest.mark.parametrize("method", ["dd", "norm:sj"])
def test_non_learning_assessors_have_no_evaluation_network(make_population, method):
    """Test dd and norm populations carry no evaluation parameters"""
    population = make_population(method)
    assert population.eta is None
    assert population.eta_optimizer is None


def test_agent_view(make_population):
    """Test per-agent views slice the stacked arrays"""
    population = make_population("lr2")
    agent = population.agent(4)
    assert np.array_equal(agent.theta.values, population.theta.values[4])
    assert agent.reputation == population.reputations[4]
    assert len(population.agents()) == 9


def test_adversarial_fraction():
    """Test the chosen fraction of agents turns adversarial with beta = 1"""
    population = init_population(100, 4, MethodSpec.parse("lr2"), 0.6, 3e-4, 100, 10, seed=0,
                                 adversarial_fraction=0.3)
    adversarial = [i for i, v in enumerate(population.variants) if v is AgentVariant.ADVERSARIAL]
    assert len(adversarial) == 30
    assert np.all(population.betas[adversarial] == 1.0)
    assert np.sum(population.betas == 0.6) == 70


def test_initial_cooperation_is_a_fair_coin():
    """Test initial C/D draws pooled over seeds stay within 5 sigma of one half"""
    draws = np.concatenate([
        init_population(100, 4, MethodSpec.parse("dd"), 0.6, 3e-4, 100, 10, seed=seed).last_actions
        for seed in range(20)
    ])
    sigma = np.sqrt(draws.size * 0.25)
    assert abs(np.sum(draws == 0) - draws.size / 2) <= 5 * sigma


def test_adversarial_members_vary_with_seed():
    """Test the adversarial count is fixed while its members follow the seed"""
    members = []
    for seed in range(5):
        population = init_population(100, 4, MethodSpec.parse("lr2"), 0.6, 3e-4, 100, 10, seed=seed,
                                     adversarial_fraction=0.1)
        chosen = {i for i, v in enumerate(population.variants) if v is AgentVariant.ADVERSARIAL}
        assert len(chosen) == 10
        members.append(chosen)
    assert len({frozenset(m) for m in members}) > 1


def test_adversaries_only_for_learned_assessors():
    """Test adversarial agents need lr2 or ippo populations"""
    with pytest.raises(ConfigurationError):
        init_population(9, 4, MethodSpec.parse("dd"), 0.6, 3e-4, 100, 10, seed=0, adversarial_fraction=0.1)


def test_population_is_reproducible(make_population):
    """Test the same seed gives the same initial population"""
    a, b = make_population("lr2", seed=5), make_population("lr2", seed=5)
    assert np.array_equal(a.theta.values, b.theta.values)
    assert np.array_equal(a.reputations, b.reputations)
    assert not np.array_equal(a.theta.values, make_population("lr2", seed=6).theta.values)


def test_seed_streams_are_independent():
    """Test purposes and paths give distinct, reproducible streams"""
    a = rng_for(1, Stream.ACT, 0, 3).random(5)
    assert np.array_equal(a, rng_for(1, Stream.ACT, 0, 3).random(5))
    assert not np.array_equal(a, rng_for(1, Stream.ASSESS, 0, 3).random(5))
    assert not np.array_equal(a, rng_for(1, Stream.ACT, 0, 4).random(5))
    assert not np.array_equal(a, rng_for(2, Stream.ACT, 0, 3).random(5))


def test_checkpoint_blob(make_population, tmp_path):
    """Test a saved agent blob loads back with its layout"""
    theta = make_population("lr2").theta.select(3)
    loaded = load_blob(save_blob(theta, tmp_path / "agent.lr2p"))
    assert loaded.layout == theta.layout
    assert np.array_equal(loaded.values, theta.values)


def test_checkpoint_rejects_batches_and_foreign_files(make_population, tmp_path):
    """Test stacked vectors and non-checkpoint files raise"""
    population = make_population("lr2")
    with pytest.raises(AutodiffError):
        save_blob(population.theta, tmp_path / "all.lr2p")
    foreign = tmp_path / "foreign.lr2p"
    foreign.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(AutodiffError):
        load_blob(foreign)


def test_text_dump(make_population, tmp_path):
    """Test the text dump lists every block with its shape"""
    theta = make_population("lr2").theta.select(0)
    text = dump_text(theta, tmp_path / "agent.txt").read_text()
    assert "# hidden_1.weight shape=[5, 32]" in text
    assert "# value.bias shape=[1]" in text


def test_handle_error_codes():
    """Test lab errors map to their codes and others to SYS001"""
    assert handle_error(ConfigurationError("bad"))["code"] == "CFG001"
    assert handle_error(ReputationError("bad"))["error_type"] == "reputation"
    assert handle_error(RuntimeError("boom"))["code"] == "SYS001"
