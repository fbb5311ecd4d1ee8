"""
Self-Checks
Invariant checks run by the `check` command
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from src.agents.learner import (
    assessment_weights,
    disagreement_penalties,
    evaluation_reward,
    reshape_reward,
    return_sensitivity,
)
from src.core.games import DilemmaAction
from src.core.reputation import SocialNorm, Standing, assess_norm, route_to_targets, update_reputations
from src.ml import autodiff as ad
from src.ml.autodiff import ComputationTape
from src.ml.networks import dilemma_layout, init_parameters, mlp_forward

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_gradients(cases: int = 100, seed: int = 0) -> Tuple[bool, str]:
    """Backward pass against central differences along random directions"""
    rng = np.random.default_rng(seed)
    layout = dilemma_layout(2)
    worst = 0.0
    for _ in range(cases):
        params = init_parameters(layout, rng)
        params = params.with_values(params.values + 0.1 * rng.standard_normal(layout.size))
        inputs = rng.random((4, 3))
        weights = rng.standard_normal((4, 2))
        value_weights = rng.standard_normal(4)

        def loss_of(values):
            tape = ComputationTape()
            out = mlp_forward(params.with_values(values), inputs, tape)
            loss = ad.reduce_sum(ad.log_softmax(out.logits) * weights) + ad.reduce_sum(out.value * value_weights)
            return tape, loss

        tape, loss = loss_of(params.values)
        grad = ad.backward(tape, output=loss).values
        direction = rng.standard_normal(layout.size)
        eps = 1e-6
        plus = float(loss_of(params.values + eps * direction)[1].value)
        minus = float(loss_of(params.values - eps * direction)[1].value)
        worst = max(worst, _relative_error((plus - minus) / (2 * eps), float(grad @ direction)))
    return worst <= TOLERANCE, f"worst relative error {worst:.2e} over {cases} cases"


def check_norm_tables() -> Tuple[bool, str]:
    expected = {
        SocialNorm.STERN_JUDGING: {("C", "G"): 1, ("D", "G"): 0, ("C", "B"): 0, ("D", "B"): 1},
        SocialNorm.SIMPLE_STANDING: {("C", "G"): 1, ("D", "G"): 0, ("C", "B"): 1, ("D", "B"): 1},
        SocialNorm.SHUNNING: {("C", "G"): 1, ("D", "G"): 0, ("C", "B"): 0, ("D", "B"): 0},
        SocialNorm.IMAGE_SCORE: {("C", "G"): 1, ("D", "G"): 0, ("C", "B"): 1, ("D", "B"): 0},
    }
    wrong = [
        f"{norm.value}:{action}{standing}"
        for norm, table in expected.items()
        for (action, standing), judgment in table.items()
        if assess_norm(norm, DilemmaAction.from_symbol(action), Standing(standing)) != judgment
    ]
    return not wrong, "all 16 entries match" if not wrong else f"mismatches: {', '.join(wrong)}"


def check_reward_identities(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    r_env = rng.normal(size=1000) * 4
    P = rng.random(1000)
    selfish = np.array_equal(reshape_reward(r_env, P, 1.0), r_env)
    full = np.allclose(reshape_reward(r_env, np.ones(1000), 0.6), r_env)
    arithmetic = abs(reshape_reward(4.0, 0.0, 0.6) - 2.4) < 1e-12
    return selfish and full and arithmetic, f"beta=1 exact: {selfish}, P=1: {full}, 4.0*0.6: {arithmetic}"


def check_reputation_bounds(updates: int = 100_000, seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    prev = rng.random(updates)
    received = rng.random((updates, 4))
    alpha = rng.random(updates)
    updated = update_reputations(prev, received, alpha)
    low = np.minimum(prev, received.min(axis=1))
    high = np.maximum(prev, received.max(axis=1))
    inside = bool(np.all(updated >= low - 1e-12) and np.all(updated <= high + 1e-12))
    fixed = bool(np.all(update_reputations(np.ones(10), np.ones((10, 4)), 0.5) == 1.0))
    return inside and fixed, f"convex combination on {updates} updates: {inside}, fixed point at 1: {fixed}"


def check_evaluation_properties(seed: int = 0) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    centered = evaluation_reward(rng.normal(size=(20, 16, 4)))
    sums_zero = bool(np.allclose(centered.sum(axis=-1), 0.0))
    example = np.allclose(evaluation_reward([1, 1, 1, -0.3]), [0.325, 0.325, 0.325, -0.975])

    side = 4
    rows, cols = np.divmod(np.arange(side * side), side)
    adjacency = np.stack([((rows + dr) % side) * side + (cols + dc) % side
                          for dr, dc in [(-1, 0), (0, 1), (1, 0), (0, -1)]], axis=1)[None]
    probs = rng.random((1, 16, 4))
    received = route_to_targets(probs[0], adjacency[0])[None]
    nonnegative = bool(np.all(disagreement_penalties(probs, received, adjacency) >= 0))
    consensus = np.full((1, 16, 4), 0.7)
    zero = bool(np.allclose(disagreement_penalties(consensus, consensus, adjacency), 0.0))
    ok = sums_zero and example and nonnegative and zero
    return ok, f"centering: {sums_zero and example}, D >= 0: {nonnegative}, D = 0 at consensus: {zero}"


def _sigmoid(x: float) -> float:
    return float(0.5 * (1.0 + np.tanh(0.5 * x)))


def check_chain_rule(seed: int = 0) -> Tuple[bool, str]:
    """One assessor, one neighbour, one step, scalar policy and evaluator parameters"""
    rng = np.random.default_rng(seed)
    theta, eta = rng.normal(), rng.normal()
    beta, alpha, gamma, mu, lr = 0.6, 0.5, 0.99, 0.2, 0.5
    r_j, P0, other = 2.0 * rng.random() + 0.5, rng.random(), rng.random()
    a_j, a_hat = 0, 0
    G_prime = rng.normal()

    def score(param, action):
        return (1.0 if action == 0 else 0.0) - _sigmoid(param)

    def log_pi(param, action):
        p = _sigmoid(param)
        return np.log(p if action == 0 else 1.0 - p)

    def objective(e):
        q = _sigmoid(e)
        P1 = alpha * P0 + (1 - alpha) * q
        theta_hat = theta + lr * score(theta, a_j) * r_j * (beta + (1 - beta) * P1)
        return log_pi(theta_hat, a_hat) * G_prime - mu * (q - other) ** 2

    q = _sigmoid(eta)
    P1 = alpha * P0 + (1 - alpha) * q
    theta_hat = theta + lr * score(theta, a_j) * r_j * (beta + (1 - beta) * P1)
    K = np.array([[[score(theta, a_j) * score(theta_hat, a_hat)]]] * 2)
    H = return_sensitivity(np.array([[r_j, r_j]]), np.array([beta, beta]), 1, gamma, alpha)
    sensitivity = lr * np.einsum("nut,num->ntm", K, H)
    adjacency = np.array([[[1], [0]]])
    w = assessment_weights(np.full((1, 2, 1), G_prime), sensitivity, adjacency, static=True)
    analytic = (w[0, 0, 0] - 2 * mu * (q - other)) * q * (1 - q)

    eps = 1e-5
    numeric = (objective(eta + eps) - objective(eta - eps)) / (2 * eps)
    error = _relative_error(numeric, analytic)
    return error <= TOLERANCE, f"analytic {analytic:.6g} vs numeric {numeric:.6g} (relative {error:.1e})"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("autodiff gradients", check_gradients),
    ("norm truth tables", check_norm_tables),
    ("reward reshaping identities", check_reward_identities),
    ("reputation update bounds", check_reputation_bounds),
    ("evaluation reward and disagreement", check_evaluation_properties),
    ("evaluation chain rule", check_chain_rule),
]


def run_checks() -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as e:
            logger.error(f"Check '{name}' raised: {e}", exc_info=True)
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail))
    return results
