"""
Policy Networks
Two tanh hidden layers of 32 units with linear policy and value heads
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.error_handling import AutodiffError, ValidationError
from src.ml import autodiff as ad
from src.ml.autodiff import ComputationTape, Tensor
from src.ml.parameters import ParameterLayout, ParameterVector

HIDDEN_UNITS = 32
HIDDEN_GAIN = np.sqrt(2.0)
POLICY_GAIN = 0.01
VALUE_GAIN = 1.0


def build_layout(n_inputs: int, n_policy: int, value_head: bool = True,
                 hidden: int = HIDDEN_UNITS) -> ParameterLayout:
    blocks = [
        ("hidden_1.weight", (n_inputs, hidden)),
        ("hidden_1.bias", (hidden,)),
        ("hidden_2.weight", (hidden, hidden)),
        ("hidden_2.bias", (hidden,)),
        ("policy.weight", (hidden, n_policy)),
        ("policy.bias", (n_policy,)),
    ]
    if value_head:
        blocks += [("value.weight", (hidden, 1)), ("value.bias", (1,))]
    return ParameterLayout(tuple(blocks))


def dilemma_layout(degree: int) -> ParameterLayout:
    """Input: own and neighbours' reputations (or last actions); output: C/D logits + value"""
    return build_layout(1 + degree, 2, value_head=True)


def evaluation_layout(degree: int) -> ParameterLayout:
    """Input: neighbours' actions and received assessments; output: one logit per neighbour"""
    return build_layout(2 * degree, degree, value_head=False)


def n_inputs_of(layout: ParameterLayout) -> int:
    return layout.shape_of("hidden_1.weight")[0]


def has_value_head(layout: ParameterLayout) -> bool:
    return "value.weight" in layout.offsets


def _orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_parameters(layout: ParameterLayout, rng: np.random.Generator, count: Optional[int] = None) -> ParameterVector:
    """Orthogonal weights (gain sqrt 2 hidden, 0.01 policy, 1 value), zero biases

    count stacks that many independently drawn copies along a leading axis.
    """
    gains = {"hidden_1": HIDDEN_GAIN, "hidden_2": HIDDEN_GAIN, "policy": POLICY_GAIN, "value": VALUE_GAIN}
    copies = 1 if count is None else count
    values = np.zeros((copies, layout.size))
    for k in range(copies):
        for name, shape in layout.blocks:
            if name.endswith(".weight"):
                values[k, layout.span(name)] = _orthogonal(shape, gains[name.split(".")[0]], rng).ravel()
    return ParameterVector(layout, values[0] if count is None else values)


@dataclass
class NetworkOutput:
    """Policy logits (..., B, n_policy) and value estimates (..., B) or None"""
    logits: Tensor
    value: Optional[Tensor]

    def policy_probs(self) -> np.ndarray:
        """Softmax over the last axis (dilemma head)"""
        shifted = self.logits.value - self.logits.value.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def assessment_probs(self) -> np.ndarray:
        """Independent sigmoid per logit (evaluation head)"""
        return 0.5 * (1.0 + np.tanh(0.5 * self.logits.value))

    def values(self) -> np.ndarray:
        if self.value is None:
            raise AutodiffError("Network has no value head")
        return self.value.value


def mlp_forward(params: ParameterVector, inputs: np.ndarray,
                tape: Optional[ComputationTape] = None) -> NetworkOutput:
    """Forward pass; inputs (*lead, B, n_inputs) against params (*lead, P)

    With a tape the parameters are watched and every op is recorded;
    without one the pass is gradient-free.
    """
    layout = params.layout
    inputs = np.asarray(inputs, dtype=np.float64)
    expected = n_inputs_of(layout)
    if inputs.ndim < 2 or inputs.shape[-1] != expected:
        raise AutodiffError(f"Network expects inputs (..., B, {expected}), got {inputs.shape}")
    if inputs.shape[:-2] != params.lead_shape and params.lead_shape:
        raise AutodiffError(
            f"Input leading axes {inputs.shape[:-2]} do not match parameter axes {params.lead_shape}"
        )

    flat = tape.watch(params) if tape is not None else ad.constant(params.values)

    def weight(name):
        return ad.block(flat, layout.offsets[name], layout.shape_of(name))

    def bias(name):
        return ad.block(flat, layout.offsets[name], layout.shape_of(name), insert_axis=True)

    x = ad.constant(inputs)
    h = ad.tanh(x @ weight("hidden_1.weight") + bias("hidden_1.bias"))
    h = ad.tanh(h @ weight("hidden_2.weight") + bias("hidden_2.bias"))
    logits = h @ weight("policy.weight") + bias("policy.bias")

    value = None
    if has_value_head(layout):
        v = h @ weight("value.weight") + bias("value.bias")
        value = ad.reshape(v, v.shape[:-1])
    return NetworkOutput(logits=logits, value=value)


def entropy_from_logits(logits: Tensor, axis: int = -1) -> Tensor:
    """Shannon entropy (nats) of softmax(logits), differentiable"""
    log_p = ad.log_softmax(logits, axis=axis)
    return ad.neg(ad.reduce_sum(ad.exp(log_p) * log_p, axis=axis))


def entropy_of(policy_dist: Union[np.ndarray, Tensor], tolerance: float = 1e-9) -> Union[float, Tensor]:
    """Shannon entropy in nats with 0 log 0 := 0

    Arrays are validated and reduced to a float; tensors stay on their tape.
    """
    if isinstance(policy_dist, Tensor):
        p = policy_dist
        safe = ad.maximum(p, np.finfo(np.float64).tiny)
        return ad.neg(ad.reduce_sum(p * ad.log(safe), axis=-1))

    p = np.asarray(policy_dist, dtype=np.float64)
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValidationError(f"Invalid probability vector: {p}")
    if abs(p.sum() - 1.0) > tolerance:
        raise ValidationError(f"Probabilities sum to {p.sum()}, not 1")
    nonzero = p[p > 0]
    return float(-(nonzero * np.log(nonzero)).sum())
