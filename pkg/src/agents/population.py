"""
Agent Population
Per-agent parameters, optimizer states, reputations and method variants, stored stacked
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from src.core.reputation import SocialNorm
from src.error_handling import ConfigurationError
from src.ml.networks import dilemma_layout, evaluation_layout, init_parameters
from src.ml.optim import AdamState, init_adam
from src.ml.parameters import ParameterVector
from src.utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)


class Method(Enum):
    """Population-wide training method"""
    LR2 = "lr2"
    IPPO = "ippo"
    DD = "dd"
    NORM = "norm"

    @property
    def learns_evaluation(self) -> bool:
        return self in (Method.LR2, Method.IPPO)

    @property
    def uses_reputation(self) -> bool:
        return self is not Method.DD


class AgentVariant(Enum):
    LR2 = "lr2"
    DD = "dd"
    IPPO = "ippo"
    NORM = "norm"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method string: lr2 | ippo | dd | norm:{sj,ss,sh,is}"""
    method: Method
    norm: Optional[SocialNorm] = None

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        text = text.strip().lower()
        if text.startswith("norm:"):
            return cls(Method.NORM, SocialNorm.parse(text.split(":", 1)[1]))
        try:
            method = Method(text)
        except ValueError:
            raise ConfigurationError(f"Unknown method '{text}'; expected lr2, ippo, dd or norm:<sj|ss|sh|is>")
        if method is Method.NORM:
            raise ConfigurationError("Norm method needs a norm tag, e.g. norm:sj")
        return cls(method)

    @property
    def label(self) -> str:
        return f"norm:{self.norm.value}" if self.norm is not None else self.method.value


@dataclass
class AgentState:
    """One agent's view of the stacked population"""
    theta: ParameterVector
    eta: Optional[ParameterVector]
    reputation: float
    theta_optimizer: AdamState
    eta_optimizer: Optional[AdamState]
    variant: AgentVariant
    norm: Optional[SocialNorm] = None


@dataclass
class Population:
    """All agents of one arena; leading axis of every array is the agent index"""
    spec: MethodSpec
    theta: ParameterVector
    eta: Optional[ParameterVector]
    theta_optimizer: AdamState
    eta_optimizer: Optional[AdamState]
    variants: List[AgentVariant]
    betas: np.ndarray
    reputations: np.ndarray
    last_actions: np.ndarray
    degree: int

    @property
    def n_agents(self) -> int:
        return len(self.variants)

    def agent(self, i: int) -> AgentState:
        return AgentState(
            theta=self.theta.select(i),
            eta=self.eta.select(i) if self.eta is not None else None,
            reputation=float(self.reputations[i]),
            theta_optimizer=self.theta_optimizer.select(i),
            eta_optimizer=self.eta_optimizer.select(i) if self.eta_optimizer is not None else None,
            variant=self.variants[i],
            norm=self.spec.norm,
        )

    def agents(self) -> List[AgentState]:
        return [self.agent(i) for i in range(self.n_agents)]

    def evolve(self, **changes) -> "Population":
        return replace(self, **changes)


def _base_variant(method: Method) -> AgentVariant:
    return {
        Method.LR2: AgentVariant.LR2,
        Method.IPPO: AgentVariant.IPPO,
        Method.DD: AgentVariant.DD,
        Method.NORM: AgentVariant.NORM,
    }[method]


def init_population(n_agents: int, degree: int, spec: MethodSpec, beta: float, learning_rate: float,
                    theta_horizon: int, eta_horizon: int, seed: int, arena: int = 0,
                    adversarial_fraction: float = 0.0) -> Population:
    """Random C/D initial actions with probability 1/2, uniform reputations, fresh networks"""
    if not 0.0 <= adversarial_fraction <= 1.0:
        raise ConfigurationError(f"adversarial_fraction={adversarial_fraction} outside [0, 1]")
    if adversarial_fraction > 0 and not spec.method.learns_evaluation:
        raise ConfigurationError("Adversarial agents are only defined for lr2 and ippo populations")

    init_rng = rng_for(seed, Stream.POPULATION_INIT, arena)
    last_actions = (init_rng.random(n_agents) < 0.5).astype(np.int64)
    reputations = init_rng.random(n_agents)

    net_rng = rng_for(seed, Stream.NETWORK_INIT, arena)
    theta = init_parameters(dilemma_layout(degree), net_rng, count=n_agents)
    eta = init_parameters(evaluation_layout(degree), net_rng, count=n_agents) if spec.method.learns_evaluation else None

    variants = [_base_variant(spec.method)] * n_agents
    effective_beta = 1.0 if spec.method is Method.IPPO else beta
    betas = np.full(n_agents, effective_beta)

    n_adversarial = int(round(adversarial_fraction * n_agents))
    if n_adversarial:
        chosen = rng_for(seed, Stream.ADVERSARIES, arena).permutation(n_agents)[:n_adversarial]
        for i in chosen:
            variants[i] = AgentVariant.ADVERSARIAL
        betas[chosen] = 1.0
        logger.info(f"Arena {arena}: {n_adversarial} of {n_agents} agents are adversarial")

    return Population(
        spec=spec,
        theta=theta,
        eta=eta,
        theta_optimizer=init_adam(theta, learning_rate, theta_horizon),
        eta_optimizer=init_adam(eta, learning_rate, eta_horizon) if eta is not None else None,
        variants=list(variants),
        betas=betas,
        reputations=reputations,
        last_actions=last_actions,
        degree=degree,
    )
