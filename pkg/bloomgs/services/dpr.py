"""
Depth Prior Regularization
Pixel (Huber), distribution (CMD) and bilateral smoothness depth losses

Each loss returns its value together with the analytic gradient with
respect to the rendered depth, so it can be attached to an autodiff tape
as a single fused operation.
"""

import logging
from typing import Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np

from bloomgs.config import DprConfig
from bloomgs.errors import InvalidArgumentError
from bloomgs.models import DprBreakdown
from bloomgs.services.autodiff import Var
from bloomgs.services.scene_core import ColorImage, DepthMap, Mask

logger = logging.getLogger(__name__)

DPR_TERMS = ("pixel", "dist", "smooth")
LUMA = np.array([0.299, 0.587, 0.114])


class LossTerm(NamedTuple):
    value: float
    grad: np.ndarray
    warning: Optional[str] = None


class DprResult(NamedTuple):
    total: float
    breakdown: DprBreakdown
    grad: np.ndarray


def _values(x: Union[DepthMap, Mask, ColorImage, np.ndarray]) -> np.ndarray:
    return x.values if hasattr(x, "values") else np.asarray(x)


def _check_same_shape(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for array in arrays[1:]:
        if array.shape != shape:
            raise InvalidArgumentError(f"depth loss inputs disagree in shape: {shape} vs {array.shape}")


# ==================== Edge weights ====================

def gradient_weight(image: Union[ColorImage, np.ndarray]) -> np.ndarray:
    """exp(-|grad Y|) of the luma channel, central differences with replicated borders."""
    luma = _values(image) @ LUMA
    padded = np.pad(luma, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.exp(-np.sqrt(gx * gx + gy * gy))


# ==================== Pixel loss ====================

def pixel_depth_loss(prior, rendered, weights, valid, huber_fraction: float = 0.2) -> LossTerm:
    """Mean over valid pixels of g * huber(D - D_hat) with delta = fraction * max |residual|."""
    prior, rendered = _values(prior).astype(np.float64), _values(rendered).astype(np.float64)
    weights, valid = np.asarray(weights, dtype=np.float64), _values(valid).astype(bool)
    _check_same_shape(prior, rendered, weights, valid)

    grad = np.zeros_like(rendered)
    count = int(valid.sum())
    if count == 0:
        return LossTerm(0.0, grad, "pixel loss has no valid pixels")

    residual = prior[valid] - rendered[valid]
    g = weights[valid]
    magnitude = np.abs(residual)
    peak = int(np.argmax(magnitude))
    delta = huber_fraction * magnitude[peak]
    if delta == 0.0:
        return LossTerm(0.0, grad)

    linear = magnitude > delta
    rho = np.where(linear, magnitude, (residual * residual + delta * delta) / (2.0 * delta))
    value = float(np.sum(g * rho) / count)

    d_rho_d_r = np.where(linear, np.sign(residual), residual / delta)
    d_rho_d_delta = np.where(linear, 0.0, 0.5 - residual * residual / (2.0 * delta * delta))
    # residual = prior - rendered, so d/d rendered flips sign
    local = -g * d_rho_d_r / count
    d_delta = float(np.sum(g * d_rho_d_delta) / count)
    local[peak] += d_delta * huber_fraction * np.sign(residual[peak]) * -1.0
    grad[valid] = local
    return LossTerm(value, grad)


# ==================== Distribution loss ====================

def central_moment(samples, k: int) -> float:
    """mean((x - mean(x)) ** k)."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise InvalidArgumentError("central moment of an empty sample set")
    if k < 1:
        raise InvalidArgumentError(f"moment order must be positive, got {k}")
    centered = samples - samples.mean()
    return float(np.mean(centered ** k))


def _moment_grad(y: np.ndarray, k: int) -> np.ndarray:
    """d/dy of the k-th moment term (k = 1 is the plain mean)."""
    n = y.size
    if k == 1:
        return np.full(n, 1.0 / n)
    centered = y - y.mean()
    lower = centered ** (k - 1)
    return (k / n) * (lower - lower.mean())


def _moment(y: np.ndarray, k: int) -> float:
    return float(y.mean()) if k == 1 else float(np.mean((y - y.mean()) ** k))


def cmd_terms(p, q, order: int, strict: bool = False) -> Tuple[float, np.ndarray, np.ndarray]:
    """Central moment discrepancy with gradients for both sample sets.

    Both sets are min-max normalized with a shared range. The k = 1 term is
    |mean(P) - mean(Q)|, or 0 in strict mode.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.size == 0 or q.size == 0:
        raise InvalidArgumentError("cmd_distance needs two non-empty sample sets")
    if order < 1:
        raise InvalidArgumentError(f"cmd order must be positive, got {order}")

    joint = np.concatenate([p, q])
    lo_index, hi_index = int(np.argmin(joint)), int(np.argmax(joint))
    lo, hi = joint[lo_index], joint[hi_index]
    width = hi - lo
    if width == 0.0:
        return 0.0, np.zeros_like(p), np.zeros_like(q)

    yp, yq = (p - lo) / width, (q - lo) / width
    value = 0.0
    g_yp = np.zeros_like(p)
    g_yq = np.zeros_like(q)
    for k in range(1, order + 1):
        if k == 1 and strict:
            continue
        diff = _moment(yp, k) - _moment(yq, k)
        value += abs(diff)
        sign = np.sign(diff)
        g_yp += sign * _moment_grad(yp, k)
        g_yq -= sign * _moment_grad(yq, k)

    g_y = np.concatenate([g_yp, g_yq])
    y = np.concatenate([yp, yq])
    g_joint = g_y / width
    g_joint[lo_index] += float(np.sum(g_y * (y - 1.0))) / width
    g_joint[hi_index] += float(np.sum(g_y * -y)) / width
    return float(value), g_joint[: p.size], g_joint[p.size:]


def cmd_distance(p, q, order: int = 5, strict: bool = False) -> float:
    return cmd_terms(p, q, order, strict)[0]


def dist_depth_loss(prior, rendered, valid, order: int = 5, strict: bool = False) -> LossTerm:
    """CMD between prior and rendered depth over valid pixels."""
    prior, rendered = _values(prior).astype(np.float64), _values(rendered).astype(np.float64)
    valid = _values(valid).astype(bool)
    _check_same_shape(prior, rendered, valid)

    grad = np.zeros_like(rendered)
    if valid.sum() < 2:
        return LossTerm(0.0, grad, "distribution loss needs at least 2 valid pixels")
    value, _, g_rendered = cmd_terms(prior[valid], rendered[valid], order, strict)
    grad[valid] = g_rendered
    return LossTerm(value, grad)


# ==================== Smoothness loss ====================

def smooth_depth_loss(rendered, valid, sigma_s: float = 2.0, sigma_c: float = 0.1, window: int = 5) -> LossTerm:
    """Bilateral-weighted squared depth differences to valid window neighbours."""
    depth = _values(rendered).astype(np.float64)
    valid = _values(valid).astype(bool)
    _check_same_shape(depth, valid)
    if window < 3 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be odd and >= 3, got {window}")

    grad = np.zeros_like(depth)
    count = int(valid.sum())
    if count == 0:
        return LossTerm(0.0, grad, "smoothness loss has no valid pixels")

    radius = window // 2
    height, width = depth.shape
    padded_depth = np.pad(depth, radius)
    padded_valid = np.pad(valid, radius)
    padded_grad = np.zeros_like(padded_depth)

    offsets = [(di, dj) for di in range(-radius, radius + 1) for dj in range(-radius, radius + 1)
               if (di, dj) != (0, 0)]

    def shifted(array, di, dj):
        return array[radius + di: radius + di + height, radius + dj: radius + dj + width]

    neighbours = np.zeros((height, width))
    for di, dj in offsets:
        neighbours += shifted(padded_valid, di, dj)
    neighbours = np.where(valid, neighbours, 0.0)
    scale = np.where(neighbours > 0, 1.0 / np.maximum(neighbours, 1.0), 0.0) / count

    total = 0.0
    for di, dj in offsets:
        spatial = np.exp(-(di * di + dj * dj) / (2.0 * sigma_s * sigma_s))
        other = shifted(padded_depth, di, dj)
        pair = valid & shifted(padded_valid, di, dj)
        diff = depth - other
        range_kernel = np.exp(-(diff * diff) / (2.0 * sigma_c * sigma_c))
        coeff = np.where(pair, scale * spatial, 0.0)
        total += float(np.sum(coeff * range_kernel * diff * diff))

        d_term = coeff * range_kernel * (2.0 * diff - diff ** 3 / (sigma_c * sigma_c))
        padded_grad[radius: radius + height, radius: radius + width] += d_term
        padded_grad[radius + di: radius + di + height, radius + dj: radius + dj + width] -= d_term

    grad += padded_grad[radius: radius + height, radius: radius + width]
    return LossTerm(total, grad)


# ==================== Combination ====================

def dpr_loss(prior, rendered, image, valid, config: DprConfig,
             terms: Iterable[str] = DPR_TERMS) -> DprResult:
    """lambda_pixel * pixel + lambda_dist * dist + lambda_smooth * smooth."""
    terms = set(terms)
    unknown = terms - set(DPR_TERMS)
    if unknown:
        raise InvalidArgumentError(f"unknown depth loss terms: {sorted(unknown)}")

    rendered_values = _values(rendered).astype(np.float64)
    _check_same_shape(_values(prior), rendered_values, _values(valid), _values(image)[..., 0])

    zero = LossTerm(0.0, np.zeros_like(rendered_values))
    pixel = pixel_depth_loss(prior, rendered, gradient_weight(image), valid,
                             config.huber_fraction) if "pixel" in terms else zero
    dist = dist_depth_loss(prior, rendered, valid, config.cmd_order,
                           config.strict_cmd) if "dist" in terms else zero
    smooth = smooth_depth_loss(rendered, valid, config.sigma_s, config.sigma_c,
                               config.window) if "smooth" in terms else zero

    total = (config.lambda_pixel * pixel.value + config.lambda_dist * dist.value
             + config.lambda_smooth * smooth.value)
    grad = (config.lambda_pixel * pixel.grad + config.lambda_dist * dist.grad
            + config.lambda_smooth * smooth.grad)
    warnings = [t.warning for t in (pixel, dist, smooth) if t.warning]
    for warning in warnings:
        logger.warning(warning)

    breakdown = DprBreakdown(pixel=pixel.value, dist=dist.value, smooth=smooth.value,
                             total=total, warnings=warnings)
    return DprResult(total, breakdown, grad)


def dpr_loss_var(rendered: Var, prior, image, valid, config: DprConfig,
                 terms: Iterable[str] = DPR_TERMS) -> Tuple[Var, DprBreakdown]:
    """Attach dpr_loss to the tape of a rendered depth Var."""
    result = dpr_loss(prior, rendered.value, image, valid, config, terms)
    out = rendered.tape.record(np.asarray(result.total), (rendered,), lambda g: (g * result.grad,))
    return out, result.breakdown
