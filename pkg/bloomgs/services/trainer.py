"""
Training Service
Anchor-scene optimization under the photometric, depth-prior and rate objective
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bloomgs.config import RunConfig
from bloomgs.errors import InvalidArgumentError, NonFiniteGradientError, NonFiniteLossError, StateFileError
from bloomgs.models import LossBreakdown, TrainSummary, ViewKind
from bloomgs.services import autodiff as ad
from bloomgs.services.anchors import (
    SceneState, decode_splats_var, initialize_anchors, save_state, state_from_arrays,
)
from bloomgs.services.autodiff import Tape, Var
from bloomgs.services.context_model import AnchorDecoder, ContextModel
from bloomgs.services.dpr import DPR_TERMS, dpr_loss_var
from bloomgs.services.evaluation import psnr
from bloomgs.services.file_formats import load_arrays
from bloomgs.services.hash_grid import HashGrid, hash_features_var
from bloomgs.services.optimizer import Adam
from bloomgs.services.pipeline import TrainingView
from bloomgs.services.quantization import entropy_from_probabilities_var, feature_probability_var, sample_noise
from bloomgs.services.renderer import photometric_loss_var, render, render_vars
from bloomgs.services.scene_core import PointCloud, Rng

logger = logging.getLogger(__name__)

INIT_STREAMS = {"anchors": 1, "grid": 2, "context": 3, "decoder": 4}
TRAIN_STREAM = 0

ABLATED_TERMS = {"no_pixel": "pixel", "no_dist": "dist", "no_smooth": "smooth"}


# ==================== Scene construction ====================

def build_scene(cloud: PointCloud, config: RunConfig) -> SceneState:
    """Initial anchors, hash grid and networks, seeded from the run seed."""
    root = Rng(config.run.seed)
    scc = config.scc
    anchors = initialize_anchors(cloud, scc, config.train, root.child(INIT_STREAMS["anchors"]))

    lo = anchors.locations.min(axis=0)
    hi = anchors.locations.max(axis=0)
    pad = 0.05 * np.maximum(hi - lo, 1e-3)
    grid = HashGrid.create(scc.hash_resolutions, scc.hash_table_size, scc.hash_features,
                           (lo - pad, hi + pad), root.child(INIT_STREAMS["grid"]))
    context = ContextModel.create(grid.output_dim, scc.hidden_width, scc.feature_dim,
                                  scc.offsets_per_anchor, scc.etas, root.child(INIT_STREAMS["context"]))
    decoder = AnchorDecoder.create(scc.feature_dim, scc.hidden_width, scc.offsets_per_anchor,
                                   root.child(INIT_STREAMS["decoder"]),
                                   color_bias=cloud.colors.mean(axis=0))
    return SceneState(anchors, grid, context, decoder, tuple(config.render.background))


def split_holdout(views: Sequence[TrainingView], every: int) -> Tuple[List[TrainingView], List[TrainingView]]:
    """Every `every`-th support view is held out from training; 0 keeps all."""
    train, held = [], []
    support_seen = 0
    for view in views:
        if view.kind == ViewKind.SUPPORT:
            if every > 0 and support_seen % every == 0:
                held.append(view)
            else:
                train.append(view)
            support_seen += 1
        else:
            train.append(view)
    return train, held


# ==================== Objective ====================

@dataclass
class LossResult:
    total: float
    breakdown: Dict[str, float]
    grads: Dict[str, np.ndarray] = field(default_factory=dict)


def dpr_terms(ablation: str) -> Tuple[str, ...]:
    if ablation == "no_dpr":
        return ()
    removed = ABLATED_TERMS.get(ablation)
    return tuple(term for term in DPR_TERMS if term != removed)


def compute_loss(state: SceneState, view: TrainingView, config: RunConfig,
                 noise: Optional[np.ndarray], with_grads: bool = True) -> LossResult:
    """Total objective of one view on a fresh tape.

    noise holds the unit quantization noise for every coded attribute; None
    evaluates the noiseless objective.
    """
    tape = Tape()
    params: Dict[str, Var] = {name: tape.leaf(value, name) for name, value in state.params().items()}
    anchors = state.anchors
    ablation = config.train.ablation
    use_rate = ablation != "no_scc"

    attrs = ad.concat([params["anchor.features"], params["anchor.scalings"], params["anchor.offsets"]], axis=1)
    render_attrs = attrs
    if use_rate:
        tables = [params[f"grid.level{i}"] for i in range(len(state.grid.levels))]
        feats = hash_features_var(state.grid, tables, anchors.locations)
        steps, mu, sigma = state.context.forward_var(feats, params)
        omega = ad.take(steps, state.context.group_columns(), axis=1)
        quantized = attrs + omega * noise if noise is not None else attrs
        if config.scc.render_quantized:
            render_attrs = quantized

    splats = decode_splats_var(anchors.locations, render_attrs, state.decoder, params, anchors.feature_dim)
    color, depth, alpha = render_vars(splats["means"], splats["scales"], splats["quats"], splats["opacity"],
                                      splats["colors"], view.camera, state.background, config.train.pixel_chunk)

    rgb = photometric_loss_var(color, view.image.values, view.mask.values)
    total = rgb
    breakdown = {"rgb": float(rgb.value)}

    terms = dpr_terms(ablation)
    if view.depth is not None and terms:
        valid = view.depth.validity & view.mask.values & (alpha.value >= config.dpr.alpha_threshold)
        dpr, dpr_breakdown = dpr_loss_var(depth, view.depth, view.image, valid, config.dpr, terms)
        total = total + dpr
        breakdown.update(pixel=dpr_breakdown.pixel, dist=dpr_breakdown.dist, smooth=dpr_breakdown.smooth)

    if use_rate:
        volume = ad.mean(ad.prod_last(splats["scales"]))
        entropy = entropy_from_probabilities_var(feature_probability_var(quantized, omega, mu, sigma))
        total = total + config.scc.lambda_volume * volume + config.scc.lambda_entropy * entropy
        breakdown.update(volume=float(volume.value), entropy=float(entropy.value))

    value = float(total.value)
    breakdown["total"] = value
    if not np.isfinite(value) or not with_grads:
        return LossResult(value, breakdown)
    return LossResult(value, breakdown, ad.backward(total))


def objective(state: SceneState, views: Sequence[TrainingView], config: RunConfig) -> float:
    """Noiseless total loss averaged over views; comparable across iterations."""
    if not views:
        return 0.0
    return float(np.mean([compute_loss(state, v, config, None, with_grads=False).total for v in views]))


def holdout_psnr(state: SceneState, views: Sequence[TrainingView], pixel_chunk: int) -> Optional[float]:
    if not views:
        return None
    scene = state.to_splats()
    values = []
    for view in views:
        if view.mask.count == 0:
            continue
        values.append(psnr(render(scene, view.camera, pixel_chunk).color, view.image, view.mask))
    return float(np.mean(values)) if values else None


def depth_error(state: SceneState, views: Sequence[TrainingView], pixel_chunk: int) -> Optional[float]:
    """Mean |rendered depth - prior| over pixels valid in both, trajectory views only."""
    scene = state.to_splats()
    errors, count = 0.0, 0
    for view in views:
        if view.kind != ViewKind.TRAJECTORY or view.depth is None:
            continue
        output = render(scene, view.camera, pixel_chunk)
        valid = output.depth.validity & view.depth.validity
        errors += float(np.abs(output.depth.values[valid] - view.depth.values[valid]).sum())
        count += int(valid.sum())
    return errors / count if count else None


# ==================== Training loop ====================

@dataclass
class TrainResult:
    state: SceneState
    summary: TrainSummary
    checkpoints: List[str] = field(default_factory=list)


class Trainer:
    """Stochastic view sampling, Adam updates and resumable checkpoints.

    Per iteration: draw a view index, then (unless no_scc) the unit noise for
    every coded attribute, both from the training stream.
    """

    def __init__(self, config: RunConfig, views: Sequence[TrainingView], state: SceneState,
                 checkpoint_dir: Optional[str] = None):
        self.config = config
        self.train_views, self.held_views = split_holdout(views, config.train.holdout_every)
        if not self.train_views:
            raise InvalidArgumentError("training needs at least one view")
        self.state = state
        self.rng = Rng(config.run.seed).child(TRAIN_STREAM)
        self.iteration = 0
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        opt = config.optimizer
        self.adam = Adam(state.group_of(),
                         {"anchor": opt.lr_anchor, "feature": opt.lr_feature,
                          "grid": opt.lr_grid, "network": opt.lr_network},
                         opt.beta1, opt.beta2, opt.eps)
        self.history: List[LossBreakdown] = []
        self.checkpoints: List[str] = []

    # Checkpointing

    def save_checkpoint(self, name: Optional[str] = None) -> Optional[str]:
        if self.checkpoint_dir is None:
            return None
        path = self.checkpoint_dir / (name or f"iter_{self.iteration:06d}.npz")
        save_state(path, self.state, self.adam.state_arrays(), {
            "iteration": self.iteration,
            "adam_step": self.adam.state.step,
            "rng": self.rng.get_state(),
            "history": [h.model_dump() for h in self.history],
        })
        self.checkpoints.append(str(path))
        logger.info("Checkpoint %s", path)
        return str(path)

    def resume(self, path: str) -> None:
        """Continue exactly where a checkpoint left off."""
        arrays, meta = load_arrays(path)
        if "iteration" not in meta or "rng" not in meta or "scene" not in meta:
            raise StateFileError(f"{path} is not a training checkpoint")
        self.state = state_from_arrays(arrays, meta["scene"])
        self.iteration = int(meta["iteration"])
        self.adam.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("adam.")},
                                    int(meta["adam_step"]))
        self.rng.set_state(meta["rng"])
        self.history = [LossBreakdown.model_validate(h) for h in meta.get("history", [])]
        logger.info("Resumed from %s at iteration %d", path, self.iteration)

    # Loop

    def step(self) -> LossBreakdown:
        view_index = int(self.rng.integers(0, len(self.train_views)))
        view = self.train_views[view_index]
        noise = None
        if self.config.train.ablation != "no_scc":
            noise = sample_noise(self.rng, (len(self.state.anchors), self.state.anchors.attribute_dim),
                                 self.config.scc.train_noise)

        result = compute_loss(self.state, view, self.config, noise)
        if not np.isfinite(result.total):
            checkpoint = self.save_checkpoint("last_good.npz")
            raise NonFiniteLossError(
                f"Loss became {result.total} at iteration {self.iteration} (view {view.index})",
                self.iteration, checkpoint,
            )

        record = LossBreakdown(iteration=self.iteration, view=view.index, **result.breakdown)
        try:
            params = self.adam.step(self.state.params(), result.grads)
        except NonFiniteGradientError as e:
            checkpoint = self.save_checkpoint("last_good.npz")
            raise NonFiniteGradientError(f"{e} at iteration {self.iteration} (view {view.index})",
                                         e.group, checkpoint) from e
        self.state = self.state.with_params(params)
        self.iteration += 1
        return record

    def run(self, iterations: Optional[int] = None) -> TrainResult:
        config = self.config.train
        target = config.iterations if iterations is None else iterations
        pixel_chunk = config.pixel_chunk

        initial_loss = objective(self.state, self.train_views, self.config)
        initial_psnr = holdout_psnr(self.state, self.held_views, pixel_chunk)
        logger.info("Training %d views (%d held out) for %d iterations, start at %d",
                    len(self.train_views), len(self.held_views), target, self.iteration)

        while self.iteration < target:
            record = self.step()
            if record.iteration % config.log_every == 0 or self.iteration == target:
                self.history.append(record)
                logger.info(record.log_line())
            if self.iteration % config.checkpoint_every == 0 or self.iteration == target:
                self.save_checkpoint()

        summary = TrainSummary(
            iterations=self.iteration,
            anchors=len(self.state.anchors),
            gaussians=len(self.state.anchors) * self.state.anchors.offsets_per_anchor,
            initial_loss=initial_loss,
            final_loss=objective(self.state, self.train_views, self.config),
            ablation=config.ablation,
            depth_error=depth_error(self.state, self.train_views, pixel_chunk),
            holdout_views=len(self.held_views),
            initial_holdout_psnr=initial_psnr,
            final_holdout_psnr=holdout_psnr(self.state, self.held_views, pixel_chunk),
            history=self.history,
        )
        return TrainResult(self.state, summary, list(self.checkpoints))


def train(config: RunConfig, cloud: PointCloud, views: Sequence[TrainingView],
          checkpoint_dir: Optional[str] = None, resume_from: Optional[str] = None) -> TrainResult:
    """Initialize from the cloud and optimize; 0 iterations returns the initialization."""
    trainer = Trainer(config, views, build_scene(cloud, config), checkpoint_dir)
    if resume_from:
        trainer.resume(resume_from)
    return trainer.run()

