"""
Reputation System
Continuous reputations, learned and predefined assessments, running-average updates
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np

from src.core.games import DilemmaAction
from src.core.topology import reverse_slots
from src.error_handling import ReputationError
from src.ml.networks import mlp_forward
from src.ml.parameters import ParameterVector

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5


class Standing(Enum):
    """Binarized reputation"""
    GOOD = "G"
    BAD = "B"


class SocialNorm(Enum):
    """Second-order (SJ, SS, SH) and first-order (IS) norms"""
    STERN_JUDGING = "sj"
    SIMPLE_STANDING = "ss"
    SHUNNING = "sh"
    IMAGE_SCORE = "is"

    @property
    def table(self) -> Tuple[int, int, int, int]:
        """(d_GC, d_GD, d_BC, d_BD): judgment of a donor by recipient standing and donor action"""
        return NORM_TABLES[self]

    @classmethod
    def parse(cls, tag: str) -> "SocialNorm":
        try:
            return cls(tag.lower())
        except ValueError:
            raise ReputationError(f"Unknown social norm '{tag}'; expected one of sj, ss, sh, is")


NORM_TABLES: Dict[SocialNorm, Tuple[int, int, int, int]] = {
    SocialNorm.STERN_JUDGING: (1, 0, 0, 1),
    SocialNorm.SIMPLE_STANDING: (1, 0, 1, 1),
    SocialNorm.SHUNNING: (1, 0, 0, 0),
    SocialNorm.IMAGE_SCORE: (1, 0, 1, 0),
}


@dataclass
class ReputationState:
    """Per-agent reputations in [0, 1] and the smoothing parameter"""
    values: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 0.0 <= self.alpha <= 1.0:
            raise ReputationError(f"Smoothing parameter alpha={self.alpha} outside [0, 1]")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ReputationError("Reputations must lie in [0, 1]")

    def updated(self, received: np.ndarray) -> "ReputationState":
        """received: (N, degree) assessments each agent got this step"""
        return ReputationState(update_reputations(self.values, received, self.alpha), self.alpha)


@dataclass
class AssessmentMatrix:
    """Assessments in assessor-slot layout: probs[t, i, s] is i's judgment of adjacency[t, i, s]"""
    adjacency: np.ndarray
    probs: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        if not (self.adjacency.shape == self.probs.shape == self.bits.shape):
            raise ReputationError(
                f"Assessment arrays disagree in shape: {self.adjacency.shape}, {self.probs.shape}, {self.bits.shape}"
            )

    def get(self, assessor: int, target: int, t: int) -> Tuple[float, int]:
        """(probability, bit); only adjacent pairs have entries"""
        slots = np.flatnonzero(self.adjacency[t, assessor] == target)
        if slots.size == 0:
            raise ReputationError(f"Agent {assessor} does not assess {target} at t={t}; they are not adjacent")
        s = slots[0]
        return float(self.probs[t, assessor, s]), int(self.bits[t, assessor, s])

    def received(self, t: int, use_bits: bool = False) -> np.ndarray:
        """(N, degree): entry [j, s'] is what j's s'-th neighbour said about j"""
        given = self.bits[t].astype(np.float64) if use_bits else self.probs[t]
        return route_to_targets(given, self.adjacency[t])


def route_to_targets(given: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Assessor-slot layout -> target-slot layout (same shape)"""
    rev = reverse_slots(adjacency)
    received = np.empty_like(given)
    n, degree = adjacency.shape
    rows = np.arange(n)
    for s in range(degree):
        received[adjacency[:, s], rev[:, s]] = given[rows, s]
    return received


def binarize(P: float) -> Standing:
    """G iff P >= 0.5"""
    return Standing.GOOD if P >= 0.5 else Standing.BAD


def assess_norm(norm: SocialNorm, donor_action: DilemmaAction, recipient_standing: Standing) -> int:
    d_gc, d_gd, d_bc, d_bd = norm.table
    if recipient_standing is Standing.GOOD:
        return d_gc if donor_action is DilemmaAction.COOPERATE else d_gd
    return d_bc if donor_action is DilemmaAction.COOPERATE else d_bd


def assess_norm_population(norm: SocialNorm, actions: np.ndarray, reputations: np.ndarray,
                           adjacency: np.ndarray) -> np.ndarray:
    """(N, degree) judgments; each assessor judges neighbour j as j's recipient"""
    d_gc, d_gd, d_bc, d_bd = norm.table
    donor_cooperates = actions[adjacency] == DilemmaAction.COOPERATE.value
    assessor_good = (reputations >= 0.5)[:, None]
    good_case = np.where(donor_cooperates, d_gc, d_gd)
    bad_case = np.where(donor_cooperates, d_bc, d_bd)
    return np.where(assessor_good, good_case, bad_case).astype(np.float64)


def assess_learned(eta: ParameterVector, obs: np.ndarray,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Sigmoid assessment probabilities and seeded Bernoulli bits

    obs is (..., 2 * degree): neighbours' current actions (1 = C) then the
    assessments the assessor received last step. eta may carry a leading
    population axis matching obs.
    """
    obs = np.asarray(obs, dtype=np.float64)
    output = mlp_forward(eta, obs[..., None, :])
    probs = output.assessment_probs()[..., 0, :]
    bits = (rng.random(probs.shape) < probs).astype(np.int64)
    return probs, bits


def update_reputation(prev: float, assessments_on_target: Sequence[float], alpha: float) -> float:
    """P_t = alpha P_{t-1} + (1 - alpha) mean(assessments)"""
    if len(assessments_on_target) == 0:
        raise ReputationError("Reputation update needs at least one assessment")
    mean_assessment = 0.0
    for a in assessments_on_target:
        mean_assessment += a
    mean_assessment /= len(assessments_on_target)
    return float(alpha * prev + (1.0 - alpha) * mean_assessment)


def update_reputations(prev: np.ndarray, received: np.ndarray, alpha: float) -> np.ndarray:
    """Vectorised update; received is (N, degree)"""
    if received.shape[-1] == 0:
        raise ReputationError("Reputation update needs at least one assessment")
    total = np.zeros(received.shape[:-1])
    for s in range(received.shape[-1]):
        total = total + received[..., s]
    return alpha * prev + (1.0 - alpha) * (total / received.shape[-1])
