"""
Optimizer Service
Adam with bias correction and per-group learning rates
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from bloomgs.errors import InvalidArgumentError, NonFiniteGradientError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Moment buffers shaped like the parameters, plus the step count."""
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over named arrays; each name belongs to one learning-rate group."""

    def __init__(
        self,
        group_of: Mapping[str, str],
        learning_rates: Mapping[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        missing = set(group_of.values()) - set(learning_rates)
        if missing:
            raise InvalidArgumentError(f"no learning rate for groups: {sorted(missing)}")
        self.group_of = dict(group_of)
        self.learning_rates = dict(learning_rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = OptimizerState()

    def _check_finite(self, grads: Mapping[str, np.ndarray]) -> None:
        for name in sorted(grads):
            if not np.all(np.isfinite(grads[name])):
                group = self.group_of.get(name, name)
                raise NonFiniteGradientError(f"Non-finite gradient in parameter group '{group}' ({name})", group)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated copies of params; parameters without a gradient are unchanged."""
        self._check_finite(grads)
        self.state.step += 1
        t = self.state.step
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t

        updated: Dict[str, np.ndarray] = {}
        for name, value in params.items():
            grad = grads.get(name)
            lr = self.learning_rates[self.group_of[name]] if name in self.group_of else 0.0
            if grad is None or lr == 0.0:
                updated[name] = value
                continue
            if grad.shape != value.shape:
                raise InvalidArgumentError(f"gradient shape {grad.shape} does not match {name} {value.shape}")

            m = self.state.first_moment.get(name, np.zeros_like(value))
            v = self.state.second_moment.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.state.first_moment[name] = m
            self.state.second_moment[name] = v

            m_hat = m / correction1
            v_hat = v / correction2
            updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated

    # Checkpointing

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"adam.m.{k}": v for k, v in self.state.first_moment.items()}
        arrays.update({f"adam.v.{k}": v for k, v in self.state.second_moment.items()})
        return arrays

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], step: int) -> None:
        self.state = OptimizerState(step=step)
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                self.state.first_moment[key[len("adam.m."):]] = np.array(value, dtype=np.float64)
            elif key.startswith("adam.v."):
                self.state.second_moment[key[len("adam.v."):]] = np.array(value, dtype=np.float64)
        logger.debug("Restored optimizer state at step %d", step)
