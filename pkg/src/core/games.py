"""
Dilemma Games
Two-player symmetric games, dilemma classification and environmental rewards
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from src.error_handling import ValidationError

T_RANGE = (0.0, 2.0)
S_RANGE = (-1.0, 1.0)


class GameClass(Enum):
    """Dilemma class implied by the payoff ordering"""
    PRISONERS_DILEMMA = "PD"
    SNOWDRIFT = "SG"
    STAG_HUNT = "SH"
    OTHER = "Other"


class DilemmaAction(Enum):
    """Cooperate or defect; value is the one-hot index"""
    COOPERATE = 0
    DEFECT = 1

    def one_hot(self) -> np.ndarray:
        vector = np.zeros(2, dtype=np.float64)
        vector[self.value] = 1.0
        return vector

    @property
    def symbol(self) -> str:
        return "C" if self is DilemmaAction.COOPERATE else "D"

    @classmethod
    def from_symbol(cls, symbol: str) -> "DilemmaAction":
        if symbol == "C":
            return cls.COOPERATE
        if symbol == "D":
            return cls.DEFECT
        raise ValidationError(f"Unknown action symbol: {symbol!r}")


C = DilemmaAction.COOPERATE
D = DilemmaAction.DEFECT


@dataclass(frozen=True)
class PayoffMatrix:
    """The 2x2 game (R, S, T, P)"""
    R: float
    S: float
    T: float
    P: float

    def as_array(self) -> np.ndarray:
        """Row player's payoffs indexed [own action, other action]"""
        return np.array([[self.R, self.S], [self.T, self.P]], dtype=np.float64)


def make_payoff_matrix(T: float, S: float, R: float = 1.0, P: float = 0.0,
                       normalized: bool = True) -> PayoffMatrix:
    """Build a payoff matrix under the R=1, P=0 normalization

    With normalized=False the caller's R and P are kept and the T/S ranges
    are not enforced.
    """
    T = float(T)
    S = float(S)
    if not (np.isfinite(T) and np.isfinite(S)):
        raise ValidationError(f"Payoffs must be finite, got T={T}, S={S}")

    if not normalized:
        return PayoffMatrix(R=float(R), S=S, T=T, P=float(P))

    if T < T_RANGE[0]:
        raise ValidationError(f"T={T} below lower bound {T_RANGE[0]}")
    if T > T_RANGE[1]:
        raise ValidationError(f"T={T} above upper bound {T_RANGE[1]}")
    if S < S_RANGE[0]:
        raise ValidationError(f"S={S} below lower bound {S_RANGE[0]}")
    if S > S_RANGE[1]:
        raise ValidationError(f"S={S} above upper bound {S_RANGE[1]}")

    return PayoffMatrix(R=1.0, S=S, T=T, P=0.0)


def classify_game(m: PayoffMatrix) -> GameClass:
    """Strict payoff orderings only; ties fall through to OTHER"""
    if m.T > m.R > m.P > m.S:
        return GameClass.PRISONERS_DILEMMA
    if m.T > m.R > m.S > m.P:
        return GameClass.SNOWDRIFT
    if m.R > m.T > m.P > m.S:
        return GameClass.STAG_HUNT
    return GameClass.OTHER


def dilemma_strength(m: PayoffMatrix) -> Tuple[float, float]:
    """Gamble-intending and risk-averting gaps (T - R, P - S)"""
    return m.T - m.R, m.P - m.S


def pairwise_payoff(a_i: DilemmaAction, a_j: DilemmaAction, m: PayoffMatrix) -> float:
    """a_i^T M a_j"""
    return float(a_i.one_hot() @ m.as_array() @ a_j.one_hot())


def env_reward(a_i: DilemmaAction, neighbour_actions: Sequence[DilemmaAction],
               m: PayoffMatrix) -> Tuple[float, List[float]]:
    """Aggregate payoff against every neighbour, plus its per-neighbour split"""
    if len(neighbour_actions) == 0:
        raise ValidationError("Agent has no neighbours; degree-0 agents are invalid")

    per_neighbour = [pairwise_payoff(a_i, a_j, m) for a_j in neighbour_actions]
    total = 0.0
    for payoff in per_neighbour:
        total += payoff
    return total, per_neighbour


def neighbour_payoffs(actions: np.ndarray, adjacency: np.ndarray, m: PayoffMatrix) -> np.ndarray:
    """Vectorised per-neighbour payoffs for a whole population

    actions: (..., N) integer action indices; adjacency: (N, degree).
    Returns (..., N, degree) with entry [i, s] = payoff of i against adjacency[i, s].
    """
    table = m.as_array()
    own = actions[..., :, None]
    other = actions[..., adjacency]
    return table[own, other]


def total_reward(per_neighbour: np.ndarray) -> np.ndarray:
    """Left-to-right sum over the neighbour axis"""
    total = np.zeros(per_neighbour.shape[:-1], dtype=np.float64)
    for slot in range(per_neighbour.shape[-1]):
        total = total + per_neighbour[..., slot]
    return total
