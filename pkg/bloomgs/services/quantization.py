"""
Quantization Service
Training noise, semi-soft rounding, discretized Gaussian probabilities and entropy
"""

from typing import Literal

import numpy as np
from scipy import special

from bloomgs.errors import InvalidArgumentError
from bloomgs.services import autodiff as ad
from bloomgs.services.autodiff import Var
from bloomgs.services.scene_core import Rng

PROBABILITY_FLOOR = 1e-12

NoiseKind = Literal["gaussian", "uniform"]


def sample_noise(rng: Rng, shape, kind: NoiseKind = "gaussian") -> np.ndarray:
    """Unit-step noise: standard normal, or uniform on [-1/2, 1/2)."""
    if kind == "gaussian":
        return rng.normal(shape)
    if kind == "uniform":
        return rng.uniform(-0.5, 0.5, shape)
    raise InvalidArgumentError(f"unknown noise kind: {kind}")


def quantize_train(values, omega, rng: Rng, kind: NoiseKind = "gaussian") -> np.ndarray:
    """values + omega * noise, noise drawn from the rng stream."""
    values = np.asarray(values, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise InvalidArgumentError("quantization step must be positive")
    return values + omega * sample_noise(rng, np.broadcast(values, omega).shape, kind)


def lattice_index(values, omega) -> np.ndarray:
    """k = round(f / omega), ties to even."""
    return np.rint(np.asarray(values, dtype=np.float64) / np.asarray(omega, dtype=np.float64))


def quantize_infer(values, omega, tau: float = 1.0) -> np.ndarray:
    """Semi-soft rounding: k omega + tau omega tanh((f - k omega) / tau).

    Equals k omega + omega tanh(f - k omega) at tau = 1 and approaches hard
    rounding as tau goes to 0.
    """
    values = np.asarray(values, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0) or tau <= 0:
        raise InvalidArgumentError("quantization step and tau must be positive")
    snapped = lattice_index(values, omega) * omega
    return snapped + tau * omega * np.tanh((values - snapped) / tau)


def hard_quantize(values, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    return lattice_index(values, omega) * omega


def feature_probability(values, omega, mu, sigma) -> np.ndarray:
    """Mass of N(mu, sigma) on [f - omega/2, f + omega/2], floored at 1e-12.

    The upper tail is used for intervals right of the mean so the
    difference never loses precision to cancellation near 1.
    """
    values, omega, mu, sigma = (np.asarray(x, dtype=np.float64) for x in (values, omega, mu, sigma))
    if np.any(sigma <= 0) or np.any(omega <= 0):
        raise InvalidArgumentError("sigma and omega must be positive")
    upper = (values + 0.5 * omega - mu) / sigma
    lower = (values - 0.5 * omega - mu) / sigma
    flip = np.where(values > mu, -1.0, 1.0)
    mass = flip * (special.ndtr(flip * upper) - special.ndtr(flip * lower))
    return np.maximum(mass, PROBABILITY_FLOOR)


def feature_probability_var(values: Var, omega: Var, mu: Var, sigma: Var) -> Var:
    flip = np.where(values.value > mu.value, -1.0, 1.0)
    upper = (values + 0.5 * omega - mu) / sigma
    lower = (values - 0.5 * omega - mu) / sigma
    mass = (ad.ndtr(upper * flip) - ad.ndtr(lower * flip)) * flip
    return ad.maximum(mass, PROBABILITY_FLOOR)


def bits(probabilities) -> np.ndarray:
    return -np.log2(np.asarray(probabilities, dtype=np.float64))


def entropy_from_probabilities(probabilities) -> float:
    """beta * sum(-log2 p) with beta = 1 / (number of coded values)."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.size == 0:
        return 0.0
    return float(bits(probabilities).sum() / probabilities.size)


def entropy_from_probabilities_var(probabilities: Var) -> Var:
    return ad.mean(-ad.log2(probabilities))
