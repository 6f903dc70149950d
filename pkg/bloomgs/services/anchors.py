"""
Anchor Scene
Anchor sets, voxel initialization, decoding anchors to Gaussians and the rate losses
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from bloomgs.config import SccConfig, TrainConfig
from bloomgs.errors import InvalidArgumentError, StateFileError
from bloomgs.services import autodiff as ad
from bloomgs.services.autodiff import Tape, Var
from bloomgs.services.context_model import DECODED_PER_OFFSET, AnchorDecoder, ContextModel, Mlp
from bloomgs.services.file_formats import load_arrays, save_arrays
from bloomgs.services.hash_grid import HashGrid, HashLevel, hash_features
from bloomgs.services.quantization import entropy_from_probabilities, feature_probability, quantize_infer
from bloomgs.services.renderer import SplatScene
from bloomgs.services.scene_core import PointCloud, Rng

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8
OPACITY_EPS = 1e-7
VOXEL_GROWTH = 1.25
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class Anchor:
    location: np.ndarray
    feature: np.ndarray
    scaling: np.ndarray
    offsets: np.ndarray


def _rows(values, count: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values if values.ndim == 2 else values.reshape(count, -1)


@dataclass
class AnchorSet:
    """N anchors: locations (N, 3), features (N, D^a), scalings (N, 6), offsets (N, 3K)."""
    locations: np.ndarray
    features: np.ndarray
    scalings: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64).reshape(-1, 3)
        count = len(self.locations)
        self.features = _rows(self.features, count)
        self.scalings = np.asarray(self.scalings, dtype=np.float64).reshape(count, 6)
        self.offsets = _rows(self.offsets, count)
        if self.offsets.shape[1] % 3:
            raise InvalidArgumentError("offsets must hold 3K values per anchor")
        for name in ("locations", "features", "scalings", "offsets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidArgumentError(f"anchor {name} must be finite")

    def __len__(self) -> int:
        return len(self.locations)

    def __getitem__(self, index: int) -> Anchor:
        return Anchor(self.locations[index], self.features[index], self.scalings[index], self.offsets[index])

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def offsets_per_anchor(self) -> int:
        return self.offsets.shape[1] // 3

    @property
    def attribute_dim(self) -> int:
        return self.feature_dim + 6 + 3 * self.offsets_per_anchor

    def attributes(self) -> np.ndarray:
        """Coded attributes [f | l | o], shape (N, D^a + 6 + 3K)."""
        return np.concatenate([self.features, self.scalings, self.offsets], axis=1)

    def with_attributes(self, attributes: np.ndarray) -> "AnchorSet":
        da = self.feature_dim
        return AnchorSet(self.locations.copy(), attributes[:, :da], attributes[:, da:da + 6],
                         attributes[:, da + 6:])


def initialize_anchors(cloud: PointCloud, scc: SccConfig, train: TrainConfig, rng: Rng) -> AnchorSet:
    """One anchor per occupied voxel at the voxel centroid.

    Spacing starts at voxel_fraction of the bounding-box diagonal and grows
    until at most max_anchors voxels are occupied.
    """
    if len(cloud) == 0:
        raise InvalidArgumentError("cannot initialize anchors from an empty cloud")
    lo, hi = cloud.bounding_box()
    diagonal = float(np.linalg.norm(hi - lo))
    spacing = train.voxel_fraction * diagonal if diagonal > 0 else 1.0

    while True:
        keys = np.floor((cloud.positions - lo) / spacing).astype(np.int64)
        voxels, inverse = np.unique(keys, axis=0, return_inverse=True)
        if len(voxels) <= train.max_anchors:
            break
        spacing *= VOXEL_GROWTH

    inverse = inverse.reshape(-1)
    count = len(voxels)
    sums = np.zeros((count, 3))
    np.add.at(sums, inverse, cloud.positions)
    occupancy = np.bincount(inverse, minlength=count).astype(np.float64)
    locations = sums / occupancy[:, None]

    logger.info("Initialized %d anchors at voxel spacing %.4f", count, spacing)
    return AnchorSet(
        locations=locations,
        features=np.zeros((count, scc.feature_dim)),
        scalings=np.full((count, 6), spacing),
        offsets=rng.normal((count, 3 * scc.offsets_per_anchor), train.offset_init_scale),
    )


# ==================== Decoding ====================

def decode_splats_var(locations: np.ndarray, attributes: Var, decoder: AnchorDecoder,
                      params: Dict[str, Var], feature_dim: int) -> Dict[str, Var]:
    """Differentiable Gaussians (means, scales, quats, opacity, colors) for every anchor offset."""
    count = len(locations)
    k = decoder.offsets_per_anchor
    decoder.check_input(feature_dim)

    features = attributes[:, :feature_dim]
    scaling = attributes[:, feature_dim:feature_dim + 6]
    offsets = attributes[:, feature_dim + 6:]

    out = ad.reshape(decoder.network.forward_var(features, params)["out"], (count, k, DECODED_PER_OFFSET))
    opacity = ad.reshape(ad.sigmoid(out[:, :, 0]), (count * k,))
    colors = ad.reshape(ad.sigmoid(out[:, :, 1:4]), (count * k, 3))
    quats = ad.reshape(out[:, :, 4:8] + IDENTITY_QUAT, (count * k, 4))
    base_scale = ad.reshape(ad.absolute(scaling[:, 3:6]), (count, 1, 3))
    scales = ad.maximum(ad.reshape(base_scale * ad.sigmoid(out[:, :, 8:11]), (count * k, 3)), SCALE_FLOOR)
    step = ad.reshape(scaling[:, 0:3], (count, 1, 3))
    means = ad.reshape(ad.reshape(offsets, (count, k, 3)) * step + locations[:, None, :], (count * k, 3))
    return {"means": means, "scales": scales, "quats": quats, "opacity": opacity, "colors": colors}


def anchors_to_gaussians(anchors: AnchorSet, decoder: AnchorDecoder,
                         background: Sequence[float] = (0.0, 0.0, 0.0)) -> SplatScene:
    """K Gaussians per anchor at x^a + o_k * l[0:3]."""
    if anchors.offsets_per_anchor != decoder.offsets_per_anchor:
        raise InvalidArgumentError(
            f"anchors carry {anchors.offsets_per_anchor} offsets, decoder expects {decoder.offsets_per_anchor}"
        )
    tape = Tape()
    params = {name: tape.constant(value) for name, value in decoder.network.params.items()}
    splats = decode_splats_var(anchors.locations, tape.constant(anchors.attributes()), decoder,
                               params, anchors.feature_dim)
    quats = splats["quats"].value
    return SplatScene(
        splats["means"].value,
        splats["scales"].value,
        quats / np.linalg.norm(quats, axis=1, keepdims=True),
        np.clip(splats["opacity"].value, OPACITY_EPS, 1.0 - OPACITY_EPS),
        splats["colors"].value,
        tuple(background),
    )


# ==================== Rate terms ====================

def context_outputs(anchors: AnchorSet, grid: HashGrid, model: ContextModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-dimension (omega, mu, sigma), each (N, A)."""
    feats = hash_features(grid, anchors.locations)
    omega = model.quant_steps(feats)[:, model.group_columns()]
    mu, sigma = model.gaussian_params(feats)
    return omega, mu, sigma


def entropy_loss(anchors: AnchorSet, grid: HashGrid, model: ContextModel, quantized: np.ndarray) -> float:
    """Average bits per coded value: beta * sum(-log2 p), beta = 1 / (N (D^a + 6 + 3K))."""
    if quantized.shape != (len(anchors), model.attribute_dim):
        raise InvalidArgumentError(
            f"quantized attributes must be {(len(anchors), model.attribute_dim)}, got {quantized.shape}"
        )
    omega, mu, sigma = context_outputs(anchors, grid, model)
    return entropy_from_probabilities(feature_probability(quantized, omega, mu, sigma))


def volume_loss(scales: np.ndarray) -> float:
    """Mean product of the three scale magnitudes."""
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    return float(np.prod(np.abs(scales), axis=1).mean()) if len(scales) else 0.0


def scc_loss(entropy: float, volume: float, lambda_volume: float = 1e-2, lambda_entropy: float = 2e-3) -> float:
    return lambda_volume * volume + lambda_entropy * entropy


# ==================== Scene state ====================

PARAM_GROUPS = ("anchor", "feature", "grid", "network")


@dataclass
class SceneState:
    """Everything needed to render or encode a trained scene."""
    anchors: AnchorSet
    grid: HashGrid
    context: ContextModel
    decoder: AnchorDecoder
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def params(self) -> Dict[str, np.ndarray]:
        params = {
            "anchor.features": self.anchors.features,
            "anchor.scalings": self.anchors.scalings,
            "anchor.offsets": self.anchors.offsets,
        }
        params.update({f"grid.level{i}": table for i, table in enumerate(self.grid.tables)})
        params.update(self.context.network.params)
        params.update(self.decoder.network.params)
        return params

    def group_of(self) -> Dict[str, str]:
        groups = {"anchor.features": "feature", "anchor.scalings": "anchor", "anchor.offsets": "anchor"}
        for name in self.params():
            if name.startswith("grid."):
                groups[name] = "grid"
            elif name.startswith(("ctx.", "dec.")):
                groups[name] = "network"
        return groups

    def with_params(self, params: Dict[str, np.ndarray]) -> "SceneState":
        anchors = AnchorSet(self.anchors.locations, params["anchor.features"],
                            params["anchor.scalings"], params["anchor.offsets"])
        grid = self.grid.with_tables([params[f"grid.level{i}"] for i in range(len(self.grid.levels))])
        return SceneState(anchors, grid, self.context.with_params(params),
                          self.decoder.with_params(params), self.background)

    def to_splats(self) -> SplatScene:
        return anchors_to_gaussians(self.anchors, self.decoder, self.background)


def quantize_scene(state: SceneState, tau: float = 1.0) -> SceneState:
    """Semi-soft round every coded attribute onto its context-predicted lattice."""
    omega, _, _ = context_outputs(state.anchors, state.grid, state.context)
    rounded = quantize_infer(state.anchors.attributes(), omega, tau)
    return SceneState(state.anchors.with_attributes(rounded), state.grid, state.context,
                      state.decoder, state.background)


# ==================== State files ====================

def state_arrays(state: SceneState) -> Dict[str, np.ndarray]:
    arrays = dict(state.params())
    arrays["anchor.locations"] = state.anchors.locations
    arrays["grid.bbox_min"] = state.grid.bbox_min
    arrays["grid.bbox_max"] = state.grid.bbox_max
    return arrays


def state_meta(state: SceneState) -> Dict[str, object]:
    return {
        "resolutions": [level.resolution for level in state.grid.levels],
        "etas": list(state.context.etas),
        "feature_dim": state.anchors.feature_dim,
        "offsets_per_anchor": state.anchors.offsets_per_anchor,
        "background": list(state.background),
    }


def save_state(path, state: SceneState, extra_arrays: Optional[Dict[str, np.ndarray]] = None,
               meta: Optional[Dict[str, object]] = None) -> None:
    arrays = state_arrays(state)
    arrays.update(extra_arrays or {})
    save_arrays(path, arrays, {"scene": state_meta(state), **(meta or {})})


def state_from_arrays(arrays: Dict[str, np.ndarray], scene_meta: Dict[str, object]) -> SceneState:
    try:
        resolutions = [int(r) for r in scene_meta["resolutions"]]
        feature_dim = int(scene_meta["feature_dim"])
        offsets_per_anchor = int(scene_meta["offsets_per_anchor"])
        grid = HashGrid([HashLevel(r, np.asarray(arrays[f"grid.level{i}"], dtype=np.float64))
                         for i, r in enumerate(resolutions)],
                        arrays["grid.bbox_min"], arrays["grid.bbox_max"])
        ctx = {name: arrays[name] for name in arrays if name.startswith("ctx.")}
        dec = {name: arrays[name] for name in arrays if name.startswith("dec.")}
        context = ContextModel(Mlp("ctx", ctx, ("q", "g")).with_params(ctx),
                               tuple(float(e) for e in scene_meta["etas"]), feature_dim, offsets_per_anchor)
        decoder = AnchorDecoder(Mlp("dec", dec, ("out",)).with_params(dec), offsets_per_anchor)
        anchors = AnchorSet(arrays["anchor.locations"], arrays["anchor.features"],
                            arrays["anchor.scalings"], arrays["anchor.offsets"])
    except (KeyError, ValueError, TypeError) as e:
        raise StateFileError(f"Incomplete scene state: {e}")
    background = tuple(float(c) for c in scene_meta.get("background", (0.0, 0.0, 0.0)))
    return SceneState(anchors, grid, context, decoder, background)


def load_state(path) -> SceneState:
    arrays, meta = load_arrays(path)
    if "scene" not in meta:
        raise StateFileError(f"{path} does not hold a scene state")
    return state_from_arrays(arrays, meta["scene"])
