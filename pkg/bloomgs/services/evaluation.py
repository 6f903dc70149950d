"""
Evaluation Service
PSNR and masked PSNR of rendered views against their targets
"""

import logging
from typing import Optional, Sequence

import numpy as np

from bloomgs.errors import InvalidArgumentError
from bloomgs.models import EvalReport, ViewMetrics
from bloomgs.services.renderer import SplatScene, render
from bloomgs.services.scene_core import ColorImage, Mask

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0


def psnr(rendered: ColorImage, target: ColorImage, valid: Optional[Mask] = None, cap: float = PSNR_CAP) -> float:
    """10 log10(1 / MSE) over valid pixels, capped for identical images."""
    if rendered.shape != target.shape:
        raise InvalidArgumentError(f"cannot compare images of shapes {rendered.shape} and {target.shape}")
    select = np.ones(target.shape, dtype=bool) if valid is None else valid.values
    if select.shape != target.shape:
        raise InvalidArgumentError(f"mask {select.shape} does not match images {target.shape}")
    if not select.any():
        raise InvalidArgumentError("PSNR needs at least one valid pixel")

    mse = float(np.mean((rendered.values[select] - target.values[select]) ** 2))
    if mse == 0.0:
        return cap
    return float(min(cap, 10.0 * np.log10(1.0 / mse)))


def evaluate(scene: SplatScene, views: Sequence, pixel_chunk: int = 1024) -> EvalReport:
    """Render every view; views carry index, kind, camera, image and mask."""
    metrics = []
    for view in views:
        output = render(scene, view.camera, pixel_chunk)
        full = psnr(output.color, view.image)
        masked = psnr(output.color, view.image, view.mask) if view.mask.count else full
        metrics.append(ViewMetrics(view=view.index, kind=view.kind, psnr=full, masked_psnr=masked))
        logger.debug("View %d (%s): psnr=%.3f masked=%.3f", view.index, view.kind.value, full, masked)

    if not metrics:
        return EvalReport()
    return EvalReport(
        views=metrics,
        mean_psnr=float(np.mean([m.psnr for m in metrics])),
        mean_masked_psnr=float(np.mean([m.masked_psnr for m in metrics])),
    )
