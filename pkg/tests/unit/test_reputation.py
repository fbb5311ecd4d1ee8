"""
Tests for the reputation system
"""

import numpy as np
import pytest

from src.core.games import C, D
from src.core.reputation import (
    AssessmentMatrix,
    ReputationState,
    SocialNorm,
    Standing,
    assess_learned,
    assess_norm,
    assess_norm_population,
    binarize,
    route_to_targets,
    update_reputation,
    update_reputations,
)
from src.error_handling import ReputationError
from src.ml.networks import evaluation_layout, init_parameters

pytestmark = pytest.mark.unit

NORM_EXPECTATIONS = {
    # (action, standing) -> judgment
    SocialNorm.STERN_JUDGING: {(C, "G"): 1, (D, "G"): 0, (C, "B"): 0, (D, "B"): 1},
    SocialNorm.SIMPLE_STANDING: {(C, "G"): 1, (D, "G"): 0, (C, "B"): 1, (D, "B"): 1},
    SocialNorm.SHUNNING: {(C, "G"): 1, (D, "G"): 0, (C, "B"): 0, (D, "B"): 0},
    SocialNorm.IMAGE_SCORE: {(C, "G"): 1, (D, "G"): 0, (C, "B"): 1, (D, "B"): 0},
}


@pytest.mark.parametrize("norm", list(SocialNorm))
def test_norm_truth_tables(norm):
    """Test all four (action, standing) judgments of every norm"""
    for (action, standing), judgment in NORM_EXPECTATIONS[norm].items():
        assert assess_norm(norm, action, Standing(standing)) == judgment


def test_norm_parse():
    """Test norm tags are case-insensitive and validated"""
    assert SocialNorm.parse("SJ") is SocialNorm.STERN_JUDGING
    with pytest.raises(ReputationError):
        SocialNorm.parse("xx")


def test_binarize_threshold():
    """Test G iff P >= 0.5"""
    assert binarize(0.5) is Standing.GOOD
    assert binarize(0.4999) is Standing.BAD


def test_update_reputation_examples():
    """Test the running average on hand-computed cases"""
    assert update_reputation(0.5, [1, 1, 1, 1], 0.5) == 0.75
    assert update_reputation(1.0, [1.0, 1.0], 0.5) == 1.0
    assert update_reputation(0.2, [0.0, 1.0], 0.0) == 0.5
    assert update_reputation(0.2, [0.0, 1.0], 1.0) == 0.2


def test_update_reputation_needs_assessments():
    """Test an empty assessment list raises"""
    with pytest.raises(ReputationError):
        update_reputation(0.5, [], 0.5)


def test_update_stays_in_convex_hull():
    """Test P_t lies between min and max of P_{t-1} and the received assessments"""
    rng = np.random.default_rng(0)
    prev = rng.random(1_000_000)
    received = rng.random((1_000_000, 4))
    alpha = rng.random(1_000_000)
    updated = update_reputations(prev, received, alpha)
    assert np.all(updated >= np.minimum(prev, received.min(axis=1)) - 1e-12)
    assert np.all(updated <= np.maximum(prev, received.max(axis=1)) + 1e-12)
    assert np.all((updated >= 0.0) & (updated <= 1.0))


def test_vectorised_update_matches_scalar():
    """Test the population update agrees with the scalar rule"""
    rng = np.random.default_rng(1)
    prev = rng.random(9)
    received = rng.random((9, 4))
    updated = update_reputations(prev, received, 0.5)
    for i in range(9):
        assert updated[i] == pytest.approx(update_reputation(prev[i], received[i].tolist(), 0.5), abs=1e-15)


def test_reputation_state_bounds():
    """Test reputations and alpha are range-checked"""
    with pytest.raises(ReputationError):
        ReputationState(np.array([1.2]))
    with pytest.raises(ReputationError):
        ReputationState(np.array([0.5]), alpha=1.5)
    state = ReputationState(np.array([0.5, 0.0])).updated(np.ones((2, 4)))
    assert state.values.tolist() == [0.75, 0.5]


def test_route_to_targets(lattice):
    """Test each target collects what its assessors said about it"""
    adjacency = lattice.adjacency
    given = np.arange(adjacency.size, dtype=np.float64).reshape(adjacency.shape)
    received = route_to_targets(given, adjacency)
    for j in range(lattice.n_agents):
        expected = sorted(given[i, s] for i in range(lattice.n_agents)
                          for s in range(lattice.degree) if adjacency[i, s] == j)
        assert sorted(received[j].tolist()) == expected


def test_norm_population_stern_judging(lattice):
    """Test good assessors reward cooperators and bad assessors reward defectors"""
    actions = np.zeros(lattice.n_agents, dtype=np.int64)
    actions[4] = 1
    reputations = np.full(lattice.n_agents, 0.9)
    reputations[0] = 0.1
    judgments = assess_norm_population(SocialNorm.STERN_JUDGING, actions, reputations, lattice.adjacency)

    for i in range(lattice.n_agents):
        for s, j in enumerate(lattice.adjacency[i]):
            cooperates = actions[j] == 0
            expected = (1 if cooperates else 0) if reputations[i] >= 0.5 else (0 if cooperates else 1)
            assert judgments[i, s] == expected


def test_assessment_matrix_get(lattice):
    """Test lookups by (assessor, target) and non-adjacent pairs"""
    adjacency = lattice.adjacency[None]
    probs = np.full(adjacency.shape, 0.25)
    bits = np.zeros(adjacency.shape, dtype=np.int64)
    matrix = AssessmentMatrix(adjacency, probs, bits)
    assert matrix.get(0, int(adjacency[0, 0, 1]), 0) == (0.25, 0)
    with pytest.raises(ReputationError):
        matrix.get(0, 0, 0)


def test_assessment_matrix_shape_check():
    """Test mismatched arrays raise"""
    with pytest.raises(ReputationError):
        AssessmentMatrix(np.zeros((1, 9, 4), dtype=np.int64), np.zeros((1, 9, 4)), np.zeros((1, 9, 3)))


def test_assess_learned_shapes_and_bits():
    """Test sigmoid probabilities and Bernoulli bits per neighbour"""
    rng = np.random.default_rng(0)
    eta = init_parameters(evaluation_layout(4), rng, count=9)
    obs = rng.random((9, 8))
    probs, bits = assess_learned(eta, obs, np.random.default_rng(5))
    assert probs.shape == bits.shape == (9, 4)
    assert np.all((probs > 0) & (probs < 1))
    assert set(np.unique(bits)).issubset({0, 1})

    again, again_bits = assess_learned(eta, obs, np.random.default_rng(5))
    assert np.array_equal(bits, again_bits)
    assert np.array_equal(probs, again)
