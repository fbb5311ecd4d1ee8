"""
Optimizers
Adam with a linearly annealed learning rate, plus the shared linear schedule
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from src.error_handling import AutodiffError
from src.ml.parameters import ParameterVector, check_finite


def linear_schedule(start: float, end: float, step: int, horizon: int) -> float:
    """start at step 0, end at step >= horizon, straight line in between"""
    if horizon <= 0:
        return float(end)
    fraction = min(max(step, 0) / horizon, 1.0)
    return float(start + (end - start) * fraction)


@dataclass
class AdamState:
    """Moments share the parameter shape; the step counter is shared by all copies"""
    m: np.ndarray
    v: np.ndarray
    step: int
    learning_rate: float
    horizon: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def effective_rate(self, step: Optional[int] = None) -> float:
        """lambda * max(0, 1 - step / horizon)"""
        step = self.step if step is None else step
        if self.horizon <= 0:
            return self.learning_rate
        return self.learning_rate * max(0.0, 1.0 - step / self.horizon)

    def select(self, index) -> "AdamState":
        return replace(self, m=self.m[index], v=self.v[index])


def init_adam(params: ParameterVector, learning_rate: float, horizon: int) -> AdamState:
    return AdamState(
        m=np.zeros_like(params.values),
        v=np.zeros_like(params.values),
        step=0,
        learning_rate=learning_rate,
        horizon=horizon,
    )


def adam_step(params: ParameterVector, grads: Union[ParameterVector, np.ndarray],
              state: AdamState) -> Tuple[ParameterVector, AdamState]:
    """One descent step on the loss whose gradient is grads"""
    g = grads.values if isinstance(grads, ParameterVector) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.values.shape or state.m.shape != g.shape:
        raise AutodiffError(
            f"Adam shape mismatch: params {params.values.shape}, grads {g.shape}, moments {state.m.shape}"
        )
    check_finite(params.layout, g, "gradient")

    rate = state.effective_rate()
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)

    if rate > 0.0:
        values = params.values - rate * m_hat / (np.sqrt(v_hat) + state.eps)
    else:
        values = params.values.copy()

    return params.with_values(values), replace(state, m=m, v=v, step=t)


def sgd_step(params: ParameterVector, grads: Union[ParameterVector, np.ndarray],
             state: AdamState) -> Tuple[ParameterVector, AdamState]:
    """Plain descent with the same annealed rate; moments are left untouched"""
    g = grads.values if isinstance(grads, ParameterVector) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.values.shape:
        raise AutodiffError(f"SGD shape mismatch: params {params.values.shape}, grads {g.shape}")
    check_finite(params.layout, g, "gradient")
    values = params.values - state.effective_rate() * g
    return params.with_values(values), replace(state, step=state.step + 1)
