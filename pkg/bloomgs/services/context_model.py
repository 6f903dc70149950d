"""
Context Model
Small tanh MLPs: the shared context trunk with quantization and probability heads,
and the anchor decoder
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import special

from bloomgs.errors import InvalidArgumentError
from bloomgs.models import AttributeGroup
from bloomgs.services import autodiff as ad
from bloomgs.services.autodiff import Var
from bloomgs.services.scene_core import Rng

SIGMA_FLOOR = 1e-6


@dataclass
class Mlp:
    """Two-layer perceptron: tanh hidden layer, linear heads.

    Weights live in a flat name -> array mapping so they can be optimized
    and serialized as one group.
    """
    prefix: str
    params: Dict[str, np.ndarray]
    heads: Tuple[str, ...] = ("out",)

    @classmethod
    def create(cls, prefix: str, input_dim: int, hidden: int, head_dims: Dict[str, int],
               rng: Rng, scale: float = 1.0) -> "Mlp":
        params = {
            f"{prefix}.w1": rng.normal((input_dim, hidden), scale / np.sqrt(max(input_dim, 1))),
            f"{prefix}.b1": np.zeros(hidden),
        }
        for head, dim in head_dims.items():
            params[f"{prefix}.w_{head}"] = rng.normal((hidden, dim), scale / np.sqrt(hidden))
            params[f"{prefix}.b_{head}"] = np.zeros(dim)
        return cls(prefix, params, tuple(head_dims))

    @property
    def input_dim(self) -> int:
        return self.params[f"{self.prefix}.w1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params[f"{self.prefix}.w1"].shape[1]

    def head_dim(self, head: str) -> int:
        return self.params[f"{self.prefix}.b_{head}"].shape[0]

    def param_names(self) -> List[str]:
        names = [f"{self.prefix}.w1", f"{self.prefix}.b1"]
        for head in self.heads:
            names += [f"{self.prefix}.w_{head}", f"{self.prefix}.b_{head}"]
        return names

    def with_params(self, params: Dict[str, np.ndarray]) -> "Mlp":
        return Mlp(self.prefix, {name: np.asarray(params[name], dtype=np.float64)
                                 for name in self.param_names()}, self.heads)

    def forward(self, inputs: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        hidden = np.tanh(inputs @ p[f"{self.prefix}.w1"] + p[f"{self.prefix}.b1"])
        return {head: hidden @ p[f"{self.prefix}.w_{head}"] + p[f"{self.prefix}.b_{head}"]
                for head in self.heads}

    def forward_var(self, inputs, params: Dict[str, Var]) -> Dict[str, Var]:
        hidden = ad.tanh(ad.lift(inputs, ad.tape_of(*params.values())) @ params[f"{self.prefix}.w1"]
                         + params[f"{self.prefix}.b1"])
        return {head: hidden @ params[f"{self.prefix}.w_{head}"] + params[f"{self.prefix}.b_{head}"]
                for head in self.heads}

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.params[name].reshape(-1) for name in self.param_names()])

    def unflatten(self, flat: np.ndarray) -> "Mlp":
        params, offset = {}, 0
        for name in self.param_names():
            shape = self.params[name].shape
            size = int(np.prod(shape))
            params[name] = np.asarray(flat[offset: offset + size], dtype=np.float64).reshape(shape)
            offset += size
        return Mlp(self.prefix, params, self.heads)

    @property
    def size(self) -> int:
        return sum(int(np.prod(v.shape)) for v in self.params.values())


def mlp_shapes(prefix: str, input_dim: int, hidden: int, head_dims: Dict[str, int]) -> Mlp:
    """Zero-filled network of a given architecture (used to unflatten blobs)."""
    params = {f"{prefix}.w1": np.zeros((input_dim, hidden)), f"{prefix}.b1": np.zeros(hidden)}
    for head, dim in head_dims.items():
        params[f"{prefix}.w_{head}"] = np.zeros((hidden, dim))
        params[f"{prefix}.b_{head}"] = np.zeros(dim)
    return Mlp(prefix, params, tuple(head_dims))


# ==================== Context model ====================

@dataclass
class ContextModel:
    """Hash feature -> (3 quantization modifiers, mean and raw sigma per attribute dimension)."""
    network: Mlp
    etas: Tuple[float, float, float]
    feature_dim: int
    offsets_per_anchor: int

    @property
    def attribute_dim(self) -> int:
        return self.feature_dim + 6 + 3 * self.offsets_per_anchor

    @classmethod
    def create(cls, input_dim: int, hidden: int, feature_dim: int, offsets_per_anchor: int,
               etas: Sequence[float], rng: Rng) -> "ContextModel":
        attribute_dim = feature_dim + 6 + 3 * offsets_per_anchor
        network = Mlp.create("ctx", input_dim, hidden, {"q": 3, "g": 2 * attribute_dim}, rng, scale=0.1)
        return cls(network, tuple(float(e) for e in etas), feature_dim, offsets_per_anchor)

    @classmethod
    def empty(cls, input_dim: int, hidden: int, feature_dim: int, offsets_per_anchor: int,
              etas: Sequence[float]) -> "ContextModel":
        attribute_dim = feature_dim + 6 + 3 * offsets_per_anchor
        network = mlp_shapes("ctx", input_dim, hidden, {"q": 3, "g": 2 * attribute_dim})
        return cls(network, tuple(float(e) for e in etas), feature_dim, offsets_per_anchor)

    def with_params(self, params: Dict[str, np.ndarray]) -> "ContextModel":
        return ContextModel(self.network.with_params(params), self.etas,
                            self.feature_dim, self.offsets_per_anchor)

    def group_columns(self) -> np.ndarray:
        """Attribute group index of every attribute column."""
        return np.repeat([g.index for g in AttributeGroup],
                         [self.feature_dim, 6, 3 * self.offsets_per_anchor])

    def quant_steps(self, hash_feats: np.ndarray) -> np.ndarray:
        """omega = eta * (1 + tanh(F_q)), shape (N, 3)."""
        raw = self.network.forward(np.atleast_2d(hash_feats))["q"]
        return np.asarray(self.etas)[None, :] * (1.0 + np.tanh(raw))

    def gaussian_params(self, hash_feats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and sigma per attribute dimension, each (N, A)."""
        out = self.network.forward(np.atleast_2d(hash_feats))["g"]
        a = self.attribute_dim
        return out[:, :a], np.logaddexp(0.0, out[:, a:]) + SIGMA_FLOOR

    def forward_var(self, hash_feats, params: Dict[str, Var]) -> Tuple[Var, Var, Var]:
        """Differentiable (omega (N, 3), mu (N, A), sigma (N, A))."""
        out = self.network.forward_var(hash_feats, params)
        a = self.attribute_dim
        omega = ad.tanh(out["q"]) * np.asarray(self.etas)[None, :] + np.asarray(self.etas)[None, :]
        mu = out["g"][:, :a]
        sigma = ad.softplus(out["g"][:, a:]) + SIGMA_FLOOR
        return omega, mu, sigma


def quant_step(hash_feat: np.ndarray, group: AttributeGroup, model: ContextModel) -> float:
    """Quantization step of one attribute group at one context feature."""
    group = AttributeGroup(group)
    return float(model.quant_steps(np.asarray(hash_feat)[None, :])[0, group.index])


# ==================== Anchor decoder ====================

DECODED_PER_OFFSET = 11  # opacity 1, color 3, quaternion 4, scale 3


@dataclass
class AnchorDecoder:
    """Anchor feature -> per-offset (opacity, color, quaternion, scale multiplier) logits."""
    network: Mlp
    offsets_per_anchor: int

    @classmethod
    def create(cls, feature_dim: int, hidden: int, offsets_per_anchor: int, rng: Rng,
               color_bias: Sequence[float] = (0.0, 0.0, 0.0)) -> "AnchorDecoder":
        network = Mlp.create("dec", feature_dim, hidden,
                             {"out": DECODED_PER_OFFSET * offsets_per_anchor}, rng, scale=0.1)
        bias = network.params["dec.b_out"].reshape(offsets_per_anchor, DECODED_PER_OFFSET)
        bias[:, 1:4] = special.logit(np.clip(np.asarray(color_bias, dtype=np.float64), 0.05, 0.95))
        network.params["dec.b_out"] = bias.reshape(-1)
        return cls(network, offsets_per_anchor)

    @classmethod
    def empty(cls, feature_dim: int, hidden: int, offsets_per_anchor: int) -> "AnchorDecoder":
        return cls(mlp_shapes("dec", feature_dim, hidden, {"out": DECODED_PER_OFFSET * offsets_per_anchor}),
                   offsets_per_anchor)

    def with_params(self, params: Dict[str, np.ndarray]) -> "AnchorDecoder":
        return AnchorDecoder(self.network.with_params(params), self.offsets_per_anchor)

    def check_input(self, feature_dim: int) -> None:
        if feature_dim != self.network.input_dim:
            raise InvalidArgumentError(
                f"decoder expects {self.network.input_dim}-d anchor features, got {feature_dim}"
            )
