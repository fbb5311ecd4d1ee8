"""
LR2 Learner
Reward reshaping, dilemma-policy updates, evaluation rewards, disagreement penalty and the
evaluation-policy update that differentiates through neighbours' one-step policy updates
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.core.reputation import AssessmentMatrix
from src.error_handling import ConfigurationError, LearnerError, NumericalError
from src.ml import autodiff as ad
from src.ml.autodiff import ComputationTape
from src.ml.networks import entropy_from_logits, mlp_forward
from src.ml.optim import AdamState, adam_step, linear_schedule, sgd_step
from src.ml.parameters import ParameterVector

logger = logging.getLogger(__name__)

ADVANTAGE_EPS = 1e-8
ENTROPY_SCHEDULES = ("anneal", "fixed")
DILEMMA_UPDATES = ("ppo", "reinforce")
EVALUATION_OPTIMIZERS = ("adam", "sgd")


@dataclass
class Hyperparameters:
    """Learning constants shared by every agent of a run"""
    beta: float = 0.6
    mu: float = 0.2
    gamma: float = 0.99
    learning_rate: float = 3e-4
    gae_lambda: float = 0.95
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    minibatch_size: int = 5
    value_clip: float = 0.2
    value_coef: float = 0.5
    entropy_start: float = 0.1
    entropy_end: float = 0.0
    entropy_schedule: str = "anneal"
    dilemma_update: str = "ppo"
    evaluation_optimizer: str = "adam"

    def __post_init__(self):
        for name in ("beta", "gamma", "gae_lambda"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name}={value} outside [0, 1]")
        if self.mu < 0:
            raise ConfigurationError(f"mu={self.mu} must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate={self.learning_rate} must be positive")
        if self.ppo_clip <= 0 or self.value_clip <= 0:
            raise ConfigurationError("ppo_clip and value_clip must be positive")
        if self.ppo_epochs < 1 or self.minibatch_size < 1:
            raise ConfigurationError("ppo_epochs and minibatch_size must be at least 1")
        if self.entropy_start < 0 or self.entropy_end < 0:
            raise ConfigurationError("Entropy weights must be non-negative")
        if self.entropy_schedule not in ENTROPY_SCHEDULES:
            raise ConfigurationError(f"entropy_schedule must be one of {ENTROPY_SCHEDULES}")
        if self.entropy_schedule == "anneal" and self.entropy_end > self.entropy_start:
            raise ConfigurationError("Annealed entropy weight must not increase over training")
        if self.dilemma_update not in DILEMMA_UPDATES:
            raise ConfigurationError(f"dilemma_update must be one of {DILEMMA_UPDATES}")
        if self.evaluation_optimizer not in EVALUATION_OPTIMIZERS:
            raise ConfigurationError(f"evaluation_optimizer must be one of {EVALUATION_OPTIMIZERS}")


def entropy_weight(h: Hyperparameters, episode: int, n_episodes: int) -> float:
    """omega for this episode; the last episode gets exactly the end value"""
    if h.entropy_schedule == "fixed":
        return h.entropy_start
    return linear_schedule(h.entropy_start, h.entropy_end, episode, n_episodes - 1)


@dataclass
class Trajectory:
    """One episode of a whole population; arrays are (T, N, ...)

    Assessment arrays are None for populations that keep no reputations.
    reputations holds T + 1 rows: the initial values, then the value after
    each step's update. The first forced_steps actions were imposed rather
    than sampled from the dilemma policy.
    """
    adjacency: np.ndarray
    dilemma_obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    bootstrap_values: np.ndarray
    neighbour_payoffs: np.ndarray
    env_rewards: np.ndarray
    rewards: np.ndarray
    reputations: np.ndarray
    betas: np.ndarray
    eval_obs: Optional[np.ndarray] = None
    assessment_probs: Optional[np.ndarray] = None
    assessment_bits: Optional[np.ndarray] = None
    received_probs: Optional[np.ndarray] = None
    received: Optional[np.ndarray] = None
    start_step: int = 0
    forced_steps: int = 0

    def __post_init__(self):
        steps = self.actions.shape[0]
        if steps == 0:
            raise LearnerError("Trajectory has no timesteps")
        if not 0 <= self.forced_steps <= steps:
            raise LearnerError(f"forced_steps={self.forced_steps} outside [0, {steps}]")
        for name in ("adjacency", "dilemma_obs", "log_probs", "values", "neighbour_payoffs",
                     "env_rewards", "rewards", "eval_obs", "assessment_probs", "received"):
            value = getattr(self, name)
            if value is not None and value.shape[0] != steps:
                raise LearnerError(f"Trajectory field '{name}' has {value.shape[0]} steps, expected {steps}")
        if self.reputations.shape[0] != steps + 1:
            raise LearnerError("Trajectory reputations must hold the initial row plus one row per step")

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]

    @property
    def degree(self) -> int:
        return self.adjacency.shape[2]

    @property
    def has_assessments(self) -> bool:
        return self.assessment_probs is not None

    def assessments(self) -> AssessmentMatrix:
        if not self.has_assessments:
            raise LearnerError("Trajectory carries no assessments")
        return AssessmentMatrix(self.adjacency, self.assessment_probs, self.assessment_bits)

    def cooperation(self) -> np.ndarray:
        """(T,) fraction of cooperators per step"""
        return (self.actions == 0).mean(axis=1)

    def policy_mask(self) -> np.ndarray:
        """(T,) 1 where the action came from the dilemma policy, 0 where it was forced"""
        mask = np.ones(self.steps)
        mask[:self.forced_steps] = 0.0
        return mask


def reshape_reward(r_env, P, beta):
    """beta r_env + P (1 - beta) r_env; works elementwise on arrays"""
    return beta * r_env + P * (1.0 - beta) * r_env


def dilemma_observation(i: int, reputations: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """[P_i, P_j1, ..., P_jdeg] in the graph's neighbour order"""
    reputations = np.asarray(reputations, dtype=np.float64)
    return np.concatenate([[reputations[i]], reputations[adjacency[i]]])


def dilemma_observations(reputations: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """(N, 1 + degree) for the whole population"""
    reputations = np.asarray(reputations, dtype=np.float64)
    return np.concatenate([reputations[:, None], reputations[adjacency]], axis=1)


def action_observations(actions: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Own and neighbours' previous actions as cooperation indicators (1 = C)"""
    cooperated = (np.asarray(actions) == 0).astype(np.float64)
    return np.concatenate([cooperated[:, None], cooperated[adjacency]], axis=1)


def discounted_returns(rewards: np.ndarray, gamma: float, bootstrap=0.0) -> np.ndarray:
    """G_t = sum_{l >= t} gamma^(l - t) r_l along axis 0"""
    returns = np.zeros_like(rewards, dtype=np.float64)
    running = np.zeros(rewards.shape[1:]) + bootstrap
    for t in reversed(range(rewards.shape[0])):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def compute_returns_and_advantages(rewards: np.ndarray, values: np.ndarray, bootstrap: np.ndarray,
                                   gamma: float, gae_lambda: float,
                                   normalize: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """GAE over axis 0; returns use the raw advantages, normalization is per agent"""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    steps = rewards.shape[0]
    if steps == 0:
        raise LearnerError("Cannot compute advantages for an empty trajectory")

    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(steps)):
        next_value = bootstrap if t == steps - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * gae_lambda * running
        advantages[t] = running

    returns = advantages + values
    if normalize:
        spread = advantages.std(axis=0)
        if np.any(spread < ADVANTAGE_EPS):
            logger.warning(f"{int(np.sum(spread < ADVANTAGE_EPS))} agent(s) have zero-variance advantages this episode")
        advantages = (advantages - advantages.mean(axis=0)) / (spread + ADVANTAGE_EPS)
    return returns, advantages


@dataclass
class UpdateDiagnostics:
    """Per-update statistics streamed to the metrics sink

    per_agent arrays follow the agent order of the update so learner shards
    can be scattered back into population order and averaged once.
    """
    per_agent: Dict[str, np.ndarray] = field(default_factory=dict)
    shared: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> Dict[str, float]:
        values = {key: float(array.mean()) for key, array in self.per_agent.items()}
        values.update(self.shared)
        return values


def _grad_norms(grads: ParameterVector) -> np.ndarray:
    return np.sqrt((grads.values ** 2).sum(axis=-1))


def _require_finite(loss: float, what: str, details: Dict[str, float]):
    if not np.isfinite(loss):
        summary = ", ".join(f"{k}={v:.4g}" for k, v in details.items())
        raise NumericalError(f"Non-finite {what} loss ({summary})")


def _ppo_update(theta: ParameterVector, optimizer: AdamState, traj: Trajectory, h: Hyperparameters,
                omega: float, rng: np.random.Generator) -> Tuple[ParameterVector, AdamState, UpdateDiagnostics]:
    obs = traj.dilemma_obs.transpose(1, 0, 2)
    actions = traj.actions.T
    old_log_probs = traj.log_probs.T
    old_values = traj.values.T
    returns, advantages = compute_returns_and_advantages(
        traj.rewards, traj.values, traj.bootstrap_values, h.gamma, h.gae_lambda
    )
    returns, advantages = returns.T, advantages.T
    # forced actions carry no policy gradient
    advantages = advantages * traj.policy_mask()

    stats = {key: np.zeros(traj.n_agents) for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "grad_norm")}
    n_updates = 0
    for _ in range(h.ppo_epochs):
        order = rng.permutation(traj.steps)
        for start in range(0, traj.steps, h.minibatch_size):
            idx = order[start:start + h.minibatch_size]
            tape = ComputationTape()
            out = mlp_forward(theta, obs[:, idx], tape)

            log_probs = ad.take(ad.log_softmax(out.logits), actions[:, idx])
            ratio = ad.exp(log_probs - old_log_probs[:, idx])
            adv = advantages[:, idx]
            surrogate = ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - h.ppo_clip, 1.0 + h.ppo_clip) * adv)
            policy_loss = -ad.mean(surrogate, axis=-1)

            v_old = old_values[:, idx]
            v_clipped = v_old + ad.clip(out.value - v_old, -h.value_clip, h.value_clip)
            target = returns[:, idx]
            value_loss = 0.5 * ad.mean(
                ad.maximum(ad.square(out.value - target), ad.square(v_clipped - target)), axis=-1
            )
            entropy = ad.mean(entropy_from_logits(out.logits), axis=-1)

            loss = ad.reduce_sum(policy_loss + h.value_coef * value_loss - omega * entropy)
            details = {
                "policy_loss": policy_loss.value,
                "value_loss": value_loss.value,
                "entropy": entropy.value,
                "approx_kl": (old_log_probs[:, idx] - log_probs.value).mean(axis=-1),
            }
            _require_finite(float(loss.value), "dilemma", {k: float(v.mean()) for k, v in details.items()})

            grads = ad.backward(tape, output=loss)
            theta, optimizer = adam_step(theta, grads, optimizer)

            for key, value in details.items():
                stats[key] += value
            stats["grad_norm"] += _grad_norms(grads)
            n_updates += 1

    return theta, optimizer, UpdateDiagnostics(
        per_agent={f"dilemma/{k}": v / n_updates for k, v in stats.items()},
        shared={"dilemma/entropy_weight": omega},
    )


def _reinforce_update(theta: ParameterVector, optimizer: AdamState, traj: Trajectory,
                      h: Hyperparameters) -> Tuple[ParameterVector, AdamState, UpdateDiagnostics]:
    obs = traj.dilemma_obs.transpose(1, 0, 2)
    returns = discounted_returns(traj.rewards, h.gamma).T * traj.policy_mask()

    tape = ComputationTape()
    out = mlp_forward(theta, obs, tape)
    log_probs = ad.take(ad.log_softmax(out.logits), traj.actions.T)
    loss = -ad.reduce_sum(log_probs * returns)
    _require_finite(float(loss.value), "reinforce", {"mean_return": float(returns.mean())})

    grads = ad.backward(tape, output=loss)
    theta, optimizer = sgd_step(theta, grads, optimizer)
    return theta, optimizer, UpdateDiagnostics(per_agent={
        "dilemma/policy_loss": -(log_probs.value * returns).sum(axis=-1),
        "dilemma/grad_norm": _grad_norms(grads),
    })


def dilemma_update(theta: ParameterVector, optimizer: AdamState, traj: Trajectory, h: Hyperparameters,
                   omega: float, rng: np.random.Generator) -> Tuple[ParameterVector, AdamState, UpdateDiagnostics]:
    """theta_hat from one episode of reshaped rewards

    theta and optimizer carry one leading agent axis matching the
    trajectory's agent axis. The minibatch permutation comes from rng and
    is shared by every agent.
    """
    if theta.lead_shape != (traj.n_agents,):
        raise LearnerError(f"Parameters {theta.lead_shape} do not match {traj.n_agents} trajectory agents")
    if h.dilemma_update == "reinforce":
        return _reinforce_update(theta, optimizer, traj, h)
    return _ppo_update(theta, optimizer, traj, h, omega, rng)


def evaluation_reward(per_neighbour_payoffs: Sequence[float]) -> np.ndarray:
    """Each neighbour's payoff minus the mean over neighbours (last axis)"""
    payoffs = np.asarray(per_neighbour_payoffs, dtype=np.float64)
    if payoffs.ndim == 0 or payoffs.shape[-1] == 0:
        raise LearnerError("Evaluation reward needs at least one neighbour payoff")
    return payoffs - payoffs.mean(axis=-1, keepdims=True)


def _neighbour_received(received_probs: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """(T, N, deg, deg): [t, i, s, s2] is what neighbour adjacency[t, i, s] received in slot s2"""
    steps = adjacency.shape[0]
    return received_probs[np.arange(steps)[:, None, None], adjacency]


def disagreement_penalties(assessment_probs: np.ndarray, received_probs: np.ndarray,
                           adjacency: np.ndarray) -> np.ndarray:
    """(T, N) sum over i's neighbours j and j's assessors k of (p_i(j) - p_k(j))^2"""
    diff = assessment_probs[..., None] - _neighbour_received(received_probs, adjacency)
    return (diff * diff).sum(axis=(-1, -2))


def disagreement_penalty(i: int, assessments: AssessmentMatrix, t: int) -> float:
    """D for one assessor at one step, from assessment probabilities"""
    if np.any(np.isnan(assessments.probs[t])):
        raise LearnerError(f"Assessment entries missing at t={t}")
    received = assessments.received(t)
    total = 0.0
    for s, j in enumerate(assessments.adjacency[t, i]):
        for value in received[j]:
            total += (assessments.probs[t, i, s] - value) ** 2
    return float(total)


def evaluation_returns(r_eval: np.ndarray, penalties: np.ndarray, gamma: float, mu: float) -> np.ndarray:
    """G'[t, i, s] = sum_{l >= t} gamma^(l - t) (r_eval[l, i, s] - mu D[l, i])"""
    return discounted_returns(r_eval - mu * penalties[..., None], gamma)


def per_sample_log_prob_grads(theta: ParameterVector, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """(N, T, P) gradients of log pi(a_t | o_t), one per agent and step

    theta is (N, P); obs (N, T, d); actions (N, T). The parameters are tiled
    once per step so a single backward sweep yields every per-sample gradient.
    """
    steps = obs.shape[1]
    tiled = theta.tiled(steps)
    tape = ComputationTape()
    out = mlp_forward(tiled, obs[:, :, None, :], tape)
    log_probs = ad.take(ad.log_softmax(out.logits), actions[:, :, None])
    total = ad.reduce_sum(log_probs)
    return ad.backward(tape, output=total).values


def lookahead_kernel(grads_before: np.ndarray, grads_after: np.ndarray) -> np.ndarray:
    """K[n, u, t] = g_u . v_t with g on the episode and v on the look-ahead episode"""
    return np.einsum("nup,ntp->nut", grads_before, grads_after)


def return_sensitivity(env_rewards: np.ndarray, betas: np.ndarray, degree: int,
                       gamma: float, alpha: float) -> np.ndarray:
    """H[n, u, m]: derivative of agent n's return G_u w.r.t. one assessment it received at m

    env_rewards is (T, N). Reputation enters the reshaped reward with weight
    (1 - beta) r_env and each assessment enters the reputation with weight
    (1 - alpha) / degree, decaying by alpha per step afterwards.
    """
    rho = (env_rewards * (1.0 - betas) * (1.0 - alpha) / degree).T
    steps = env_rewards.shape[0]
    lag = np.arange(steps)[None, :] - np.arange(steps)[:, None]
    ahead = lag >= 0
    gamma_powers = np.where(ahead, gamma ** np.maximum(lag, 0), 0.0)
    alpha_powers = np.where(ahead, alpha ** np.maximum(lag, 0), 0.0)
    return np.einsum("ul,nl,ml->num", gamma_powers, rho, alpha_powers)


def assessment_weights(G_prime: np.ndarray, sensitivity: np.ndarray, adjacency: np.ndarray,
                       static: bool) -> np.ndarray:
    """w[i, m, s]: total derivative of i's objective w.r.t. its assessment q_i[m, s]

    sensitivity is M[j, t, m], the derivative of j's look-ahead log-likelihood
    at t w.r.t. an assessment j received at m. G_prime is (T, N, deg); slots
    of later steps are matched to the assessed neighbour by identity.
    """
    steps, n, degree = adjacency.shape
    by_agent = adjacency.transpose(1, 0, 2)
    m_index = np.broadcast_to(np.arange(steps)[None, :, None], by_agent.shape)
    picked = sensitivity[by_agent, :, m_index]
    G = G_prime.transpose(1, 0, 2)
    if static:
        return np.einsum("imst,its->ims", picked, G)
    same_target = (by_agent[:, :, :, None, None] == by_agent[:, None, None, :, :]).astype(np.float64)
    return np.einsum("imsta,ita,imst->ims", same_target, G, picked)


@dataclass
class LookaheadContext:
    """Retained quantities of the neighbours' one-step updates

    sensitivity[j, t, m] is the learning rate times the derivative of j's
    look-ahead log-likelihood at step t w.r.t. one assessment j received at
    step m.
    """
    sensitivity: np.ndarray
    learning_rate: float


def build_lookahead(theta: ParameterVector, theta_hat: ParameterVector, traj: Trajectory,
                    lookahead: Trajectory, h: Hyperparameters, alpha: float,
                    learning_rate: float) -> LookaheadContext:
    """Per-agent chain-rule intermediates; agents are independent so shards may call this separately"""
    g = per_sample_log_prob_grads(theta, traj.dilemma_obs.transpose(1, 0, 2), traj.actions.T)
    v = per_sample_log_prob_grads(theta_hat, lookahead.dilemma_obs.transpose(1, 0, 2), lookahead.actions.T)
    g = g * traj.policy_mask()[None, :, None]
    v = v * lookahead.policy_mask()[None, :, None]
    K = lookahead_kernel(g, v)
    H = return_sensitivity(traj.env_rewards, traj.betas, traj.degree, h.gamma, alpha)
    M = np.einsum("nut,num->ntm", K, H)
    return LookaheadContext(sensitivity=learning_rate * M, learning_rate=learning_rate)


def evaluation_update(eta: ParameterVector, optimizer: AdamState, traj: Trajectory,
                      lookahead: Optional[Trajectory], context: Optional[LookaheadContext],
                      h: Hyperparameters, agents: Optional[np.ndarray] = None,
                      static_topology: bool = False) -> Tuple[ParameterVector, AdamState, UpdateDiagnostics]:
    """eta_hat = eta + lambda f for the assessors in agents (default: everyone)

    eta and optimizer hold only the selected assessors. f combines the path
    through neighbours' look-ahead updates (context) with the direct
    gradient of -mu D; neighbours' own assessments are held fixed.
    """
    if lookahead is None or context is None:
        raise LearnerError(
            "Evaluation update needs the look-ahead trajectory and retained neighbour intermediates; "
            "enable the cross-validation rollout"
        )
    if not traj.has_assessments or not lookahead.has_assessments:
        raise LearnerError("Evaluation update needs trajectories with assessments")
    agents = np.arange(traj.n_agents) if agents is None else np.asarray(agents)

    r_eval = evaluation_reward(lookahead.neighbour_payoffs)
    penalties = disagreement_penalties(traj.assessment_probs, traj.received_probs, traj.adjacency)
    G_prime = evaluation_returns(r_eval, penalties, h.gamma, h.mu)
    weights = assessment_weights(G_prime[:, agents], context.sensitivity, traj.adjacency[:, agents], static_topology)

    neighbour_received = _neighbour_received(traj.received_probs, traj.adjacency)[:, agents]
    not_self = traj.adjacency[np.arange(traj.steps)[:, None, None], traj.adjacency][:, agents] != agents[None, :, None, None]
    neighbour_received = neighbour_received.transpose(1, 0, 2, 3)
    not_self = not_self.transpose(1, 0, 2, 3).astype(np.float64)
    discounts = h.gamma ** np.arange(traj.steps)

    tape = ComputationTape()
    out = mlp_forward(eta, traj.eval_obs[:, agents].transpose(1, 0, 2), tape)
    q = ad.sigmoid(out.logits)
    lookahead_term = ad.reduce_sum(q * weights)
    diff = ad.reshape(q, q.shape + (1,)) - neighbour_received
    penalty = ad.reduce_sum(ad.reduce_sum(ad.square(diff) * not_self, axis=-1), axis=-1)
    penalty_term = ad.reduce_sum(penalty * discounts)
    objective = lookahead_term - h.mu * penalty_term
    loss = -objective
    _require_finite(float(loss.value), "evaluation", {"mean_D": float(penalties.mean())})

    grads = ad.backward(tape, output=loss)
    if h.evaluation_optimizer == "sgd":
        eta_hat, optimizer = sgd_step(eta, grads, optimizer)
    else:
        eta_hat, optimizer = adam_step(eta, grads, optimizer)

    per_agent_objective = (q.value * weights).sum(axis=(1, 2)) - h.mu * (penalty.value * discounts).sum(axis=1)
    return eta_hat, optimizer, UpdateDiagnostics(per_agent={
        "evaluation/objective": per_agent_objective,
        "evaluation/disagreement": penalties[:, agents].mean(axis=0),
        "evaluation/grad_norm": _grad_norms(grads),
        "evaluation/lookahead_weight": np.abs(weights).mean(axis=(1, 2)),
    })
