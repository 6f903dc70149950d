"""
Splat Renderer
CPU differentiable Gaussian splatting (color, z-depth, alpha) and the photometric loss
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from bloomgs.errors import InvalidArgumentError
from bloomgs.services import autodiff as ad
from bloomgs.services.autodiff import Tape, Var
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Gaussian3D, Mask

logger = logging.getLogger(__name__)

ALPHA_CAP = 0.999
CUTOFF_Q = 9.0  # 3 sigma
LOW_PASS = 0.3
NEAR_PLANE = 0.01

SSIM_WEIGHT = 0.2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class SplatScene:
    """Renderable Gaussians in structure-of-arrays form plus a background color."""
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        count = len(np.asarray(self.means).reshape(-1, 3))
        shapes = {
            "means": (count, 3), "scales": (count, 3), "rotations": (count, 4),
            "opacities": (count,), "colors": (count, 3),
        }
        for name, shape in shapes.items():
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(shape)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if np.any(self.scales <= 0):
            raise InvalidArgumentError("Gaussian scales must be positive")
        if np.any((self.opacities <= 0) | (self.opacities >= 1)):
            raise InvalidArgumentError("Gaussian opacities must lie in (0, 1)")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or any(not 0.0 <= c <= 1.0 for c in bg):
            raise InvalidArgumentError("background must be three reals in [0, 1]")
        object.__setattr__(self, "background", bg)

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D],
                       background: Sequence[float] = (0.0, 0.0, 0.0)) -> "SplatScene":
        if not gaussians:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                       np.zeros(0), np.zeros((0, 3)), tuple(background))
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            tuple(background),
        )

    @property
    def gaussians(self) -> List[Gaussian3D]:
        rotations = self.rotations / np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return [Gaussian3D(m, s, q, o, c) for m, s, q, o, c in
                zip(self.means, self.scales, rotations, self.opacities, self.colors)]


@dataclass(frozen=True)
class RenderOutput:
    """Blended color, unnormalized z-depth and accumulated alpha."""
    color: ColorImage
    depth: DepthMap
    alpha: np.ndarray

    @property
    def transmittance(self) -> np.ndarray:
        return 1.0 - self.alpha


# ==================== Projection ====================

@dataclass
class ProjectedSplats:
    """Screen-space splats in front-to-back order."""
    order: np.ndarray
    mean2d: Var
    conic: Var
    depth: Var


def _rotation_matrices(quats: Var) -> Var:
    norm = ad.sqrt(ad.sum(ad.square(quats), axis=1, keepdims=True))
    q = quats / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rows = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
    return ad.stack([ad.stack(row, axis=-1) for row in rows], axis=-2)


def project_splats(means: Var, scales: Var, quats: Var, camera: Camera,
                   near: float = NEAR_PLANE) -> ProjectedSplats:
    """EWA projection of 3D covariances to screen-space conics; drops splats behind near."""
    z_all = camera.world_to_camera(means.value)[:, 2]
    visible = np.nonzero(z_all > near)[0]
    order = visible[np.lexsort((visible, z_all[visible]))]

    means = ad.take(means, order, axis=0)
    scales = ad.take(scales, order, axis=0)
    quats = ad.take(quats, order, axis=0)
    count = len(order)

    rot = _rotation_matrices(quats)
    m = rot * ad.reshape(scales, (count, 1, 3))
    cov3d = m @ m.T

    w = camera.rotation
    cam = means @ w.T + camera.translation
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    inv_z = 1.0 / z
    zeros = np.zeros(count)
    jac = ad.stack([
        ad.stack([camera.fx * inv_z, zeros, -camera.fx * x * inv_z * inv_z], axis=-1),
        ad.stack([zeros, camera.fy * inv_z, -camera.fy * y * inv_z * inv_z], axis=-1),
    ], axis=-2)
    t = jac @ w
    cov2d = t @ cov3d @ t.T

    a = cov2d[:, 0, 0] + LOW_PASS
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + LOW_PASS
    det = a * c - b * b
    conic = ad.stack([c / det, -b / det, a / det], axis=-1)
    mean2d = ad.stack([camera.fx * x * inv_z + camera.cx, camera.fy * y * inv_z + camera.cy], axis=-1)
    return ProjectedSplats(order, mean2d, conic, z)


# ==================== Blending ====================

def _pixel_bands(height: int, width: int, pixel_chunk: int):
    rows_per_band = max(1, pixel_chunk // width)
    for r0 in range(0, height, rows_per_band):
        yield r0, min(height, r0 + rows_per_band)


def _band_members(mean2d: np.ndarray, conic: np.ndarray, r0: int, r1: int, width: int) -> np.ndarray:
    """Splats whose 3-sigma box touches pixel centers of rows [r0, r1)."""
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    det = a * c - b * b
    ext_x = 3.0 * np.sqrt(c / det) * (1 + 1e-9) + 1e-9
    ext_y = 3.0 * np.sqrt(a / det) * (1 + 1e-9) + 1e-9
    mx, my = mean2d[:, 0], mean2d[:, 1]
    keep = ((my + ext_y >= r0 + 0.5) & (my - ext_y <= r1 - 0.5)
            & (mx + ext_x >= 0.5) & (mx - ext_x <= width - 0.5))
    return np.nonzero(keep)[0]


def _band_terms(mean2d, conic, opacity, members, r0, r1, width):
    v, u = np.mgrid[r0:r1, 0:width]
    px = (u.reshape(-1) + 0.5)[:, None]
    py = (v.reshape(-1) + 0.5)[:, None]
    dx = px - mean2d[members, 0][None, :]
    dy = py - mean2d[members, 1][None, :]
    a, b, c = (conic[members, k][None, :] for k in range(3))
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    g = np.exp(-0.5 * q)
    raw = opacity[members][None, :] * g
    inside = q <= CUTOFF_Q
    alpha = np.where(inside, np.minimum(raw, ALPHA_CAP), 0.0)
    survive = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((len(px), 1)), survive[:, :-1]], axis=1)
    final = survive[:, -1] if alpha.shape[1] else np.ones(len(px))
    return dx, dy, q, g, raw, inside, alpha, trans, final


def splat_blend(mean2d: Var, conic: Var, depth: Var, opacity: Var, color: Var,
                background: np.ndarray, shape: Tuple[int, int], pixel_chunk: int = 1024) -> Var:
    """Front-to-back alpha blending; returns an (H, W, 5) stack of r, g, b, depth, alpha.

    Inputs must already be sorted front to back.
    """
    height, width = shape
    background = np.asarray(background, dtype=np.float64)
    tape = ad.tape_of(mean2d, conic, depth, opacity, color)
    mean2d, conic, depth, opacity, color = (ad.lift(v, tape) for v in (mean2d, conic, depth, opacity, color))
    m2, cn, zz, op, col = mean2d.value, conic.value, depth.value, opacity.value, color.value

    out = np.zeros((height * width, 5))
    bands = list(_pixel_bands(height, width, pixel_chunk))
    for r0, r1 in bands:
        members = _band_members(m2, cn, r0, r1, width)
        *_, alpha, trans, final = _band_terms(m2, cn, op, members, r0, r1, width)
        weights = alpha * trans
        rows = slice(r0 * width, r1 * width)
        out[rows, :3] = weights @ col[members] + final[:, None] * background[None, :]
        out[rows, 3] = weights @ zz[members]
        out[rows, 4] = weights.sum(axis=1)

    def vjp(grad_out):
        grad_out = grad_out.reshape(height * width, 5)
        g_mean = np.zeros_like(m2)
        g_conic = np.zeros_like(cn)
        g_depth = np.zeros_like(zz)
        g_opacity = np.zeros_like(op)
        g_color = np.zeros_like(col)

        for r0, r1 in bands:
            members = _band_members(m2, cn, r0, r1, width)
            if len(members) == 0:
                continue
            dx, dy, q, g, raw, inside, alpha, trans, final = _band_terms(m2, cn, op, members, r0, r1, width)
            weights = alpha * trans
            gout = grad_out[r0 * width:r1 * width]
            g_rgb, g_d, g_a = gout[:, :3], gout[:, 3], gout[:, 4]

            value = g_rgb @ col[members].T + g_d[:, None] * zz[members][None, :] + g_a[:, None]
            weighted = weights * value
            behind = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1] - weighted
            behind = behind + (final * (g_rgb @ background))[:, None]
            d_alpha = trans * value - behind / (1.0 - alpha)
            d_raw = np.where(inside & (raw < ALPHA_CAP), d_alpha, 0.0)

            g_opacity[members] += (d_raw * g).sum(axis=0)
            d_q = d_raw * op[members][None, :] * (-0.5 * g)
            a, b, c = (cn[members, k][None, :] for k in range(3))
            g_conic[members, 0] += (d_q * dx * dx).sum(axis=0)
            g_conic[members, 1] += (d_q * 2.0 * dx * dy).sum(axis=0)
            g_conic[members, 2] += (d_q * dy * dy).sum(axis=0)
            g_mean[members, 0] += (d_q * -(2.0 * a * dx + 2.0 * b * dy)).sum(axis=0)
            g_mean[members, 1] += (d_q * -(2.0 * b * dx + 2.0 * c * dy)).sum(axis=0)
            g_color[members] += weights.T @ g_rgb
            g_depth[members] += weights.T @ g_d

        return g_mean, g_conic, g_depth, g_opacity, g_color

    return tape.record(out.reshape(height, width, 5), (mean2d, conic, depth, opacity, color), vjp)


def render_vars(means: Var, scales: Var, quats: Var, opacity: Var, colors: Var, camera: Camera,
                background: Sequence[float], pixel_chunk: int = 1024) -> Tuple[Var, Var, Var]:
    """Differentiable render; returns color (H, W, 3), depth (H, W) and alpha (H, W)."""
    splats = project_splats(means, scales, quats, camera)
    stacked = splat_blend(
        splats.mean2d, splats.conic, splats.depth,
        ad.take(opacity, splats.order, axis=0), ad.take(colors, splats.order, axis=0),
        np.asarray(background, dtype=np.float64), camera.shape, pixel_chunk,
    )
    return stacked[:, :, :3], stacked[:, :, 3], stacked[:, :, 4]


def render(scene: SplatScene, camera: Camera, pixel_chunk: int = 1024) -> RenderOutput:
    """Render a scene without recording gradients."""
    tape = Tape()
    inputs = [tape.constant(v) for v in (scene.means, scene.scales, scene.rotations,
                                         scene.opacities, scene.colors)]
    color, depth, alpha = render_vars(*inputs, camera, scene.background, pixel_chunk)
    acc = np.clip(alpha.value, 0.0, 1.0)
    valid = acc > 0
    return RenderOutput(
        ColorImage(np.clip(color.value, 0.0, 1.0)),
        DepthMap(np.where(valid, depth.value, 0.0), valid & (depth.value > 0)),
        acc,
    )


# ==================== Photometric loss ====================

def _ssim_kernel() -> np.ndarray:
    offsets = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    kernel = np.exp(-(offsets ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return kernel / kernel.sum()


def _blur(values: np.ndarray) -> np.ndarray:
    kernel = _ssim_kernel()
    out = ndimage.correlate1d(values, kernel, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)


def _window_norm(height: int, width: int) -> np.ndarray:
    return _blur(np.ones((height, width, 1)))


def window_mean(x, norm: np.ndarray):
    """Gaussian-window local mean, renormalized by the window mass inside the image."""
    if not isinstance(x, Var):
        return _blur(np.asarray(x, dtype=np.float64)) / norm
    return x.tape.record(_blur(x.value) / norm, (x,), lambda g: (_blur(g / norm),))


def ssim_map(x: Var, y: np.ndarray) -> Var:
    """Per-pixel, per-channel SSIM of a differentiable image against a fixed one."""
    norm = _window_norm(*y.shape[:2])
    mu_x = window_mean(x, norm)
    mu_y = window_mean(y, norm)
    var_x = window_mean(x * x, norm) - mu_x * mu_x
    var_y = window_mean(y * y, norm) - mu_y * mu_y
    cov = window_mean(x * y, norm) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return num / den


def photometric_loss_var(rendered: Var, target: np.ndarray, valid: np.ndarray) -> Var:
    """(1 - 0.2) L1 + 0.2 (1 - SSIM) averaged over valid pixels."""
    target = np.asarray(target, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if rendered.shape != target.shape or valid.shape != target.shape[:2]:
        raise InvalidArgumentError(
            f"photometric loss shapes disagree: {rendered.shape}, {target.shape}, {valid.shape}"
        )
    count = int(valid.sum())
    if count == 0:
        return rendered.tape.constant(0.0)

    weight = np.repeat(valid[:, :, None], 3, axis=2).astype(np.float64) / (3.0 * count)
    l1 = ad.sum(ad.absolute(rendered - target) * weight)
    ssim = ad.sum(ssim_map(rendered, target) * weight)
    return (1.0 - SSIM_WEIGHT) * l1 + SSIM_WEIGHT * (1.0 - ssim)


def photometric_loss(rendered: ColorImage, target: ColorImage, valid: Optional[Mask] = None) -> float:
    mask = np.ones(target.shape, dtype=bool) if valid is None else valid.values
    tape = Tape()
    return float(photometric_loss_var(tape.constant(rendered.values), target.values, mask).value)
