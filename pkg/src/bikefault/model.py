"""Transformer encoder with masked-segment reconstruction and a linear head.

Architecture (binding choices, since only the block type is dictated by the
problem): learnable input projection plus a learnable position table, L
pre-norm encoder blocks (multi-head attention, then a two-layer ReLU
feed-forward, both on residual paths), a per-position linear reconstruction
head, and a mean-pool linear classification head.  Masked time steps are
replaced by a learnable token vector in (standardized) input space.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import numerics
from .numerics import Tensor, dropout, layer_norm, masked_fill, matmul, softmax_rows


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    t_steps: int = 64
    input_dim: int = 5
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 256
    mask_ratio: float = 0.15
    mask_mean_len: float = 3.0
    dropout: float = 0.0
    n_classes: int = 2

    def __post_init__(self):
        for name in ("t_steps", "input_dim", "d_model", "n_heads", "n_layers", "d_ff", "n_classes"):
            if getattr(self, name) < (0 if name == "n_layers" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.mask_mean_len < 1.0:
            raise ConfigError(f"mask_mean_len must be >= 1, got {self.mask_mean_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


HEAD_PARAMS = ("head.w", "head.b")


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The fixed, ordered parameter name -> shape map for a configuration.

    This order is also the serialization order of checkpoint weights.
    """
    dm, dff, d, t = cfg.d_model, cfg.d_ff, cfg.input_dim, cfg.t_steps
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (d, dm),
        "embed.b": (dm,),
        "embed.pos": (t, dm),
        "mask_token": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gain"] = (dm,)
        shapes[p + "ln1.bias"] = (dm,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + proj] = (dm, dm)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + b] = (dm,)
        shapes[p + "ln2.gain"] = (dm,)
        shapes[p + "ln2.bias"] = (dm,)
        shapes[p + "ffn.w1"] = (dm, dff)
        shapes[p + "ffn.b1"] = (dff,)
        shapes[p + "ffn.w2"] = (dff, dm)
        shapes[p + "ffn.b2"] = (dm,)
    shapes["recon.w"] = (dm, d)
    shapes["recon.b"] = (d,)
    shapes["head.w"] = (dm, cfg.n_classes)
    shapes["head.b"] = (cfg.n_classes,)
    return shapes


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_parameters(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Deterministic initialization: glorot matrices, zero biases, unit gains."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1717]))
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name in ("embed.pos", "mask_token"):
            params[name] = (0.02 * rng.standard_normal(shape)).astype(dtype)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _glorot(rng, shape, dtype)
    return params


def init_head(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """A freshly initialized classification head (used by linear probing)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4EAD]))
    return {"head.w": _glorot(rng, (cfg.d_model, cfg.n_classes), dtype),
            "head.b": np.zeros(cfg.n_classes, dtype=dtype)}


# -- masking --------------------------------------------------------------------


@dataclass
class MaskSpec:
    """Boolean (n, t) array marking masked time steps, plus the seed used."""

    mask: np.ndarray
    seed: int

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def generate_mask_spec(n: int, t: int, ratio: float, mean_len: float, seed: int) -> MaskSpec:
    """Contiguous masked segments with geometric lengths, per sample.

    Each sample gets exactly round(ratio * t) masked steps: segments of
    geometric length (mean ``mean_len``) are placed at random starts and
    the final segment is trimmed to hit the target count.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    if mean_len < 1.0:
        raise ValueError(f"mean_len must be >= 1, got {mean_len}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    target = int(round(ratio * t))
    mask = np.zeros((n, t), dtype=bool)
    for i in range(n):
        count = 0
        row = mask[i]
        while count < target:
            start = int(rng.integers(0, t))
            length = int(rng.geometric(1.0 / mean_len))
            for pos in range(start, min(start + length, t)):
                if count == target:
                    break
                if not row[pos]:
                    row[pos] = True
                    count += 1
    return MaskSpec(mask=mask, seed=seed)


def apply_mask(x: Tensor, spec: MaskSpec, mask_token: Tensor) -> Tensor:
    """Replace all channels of masked time steps with the mask token."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if spec.mask.shape != x.shape[:2]:
        raise numerics.ShapeError(f"mask shape {spec.mask.shape} does not match input {x.shape}")
    return masked_fill(x, spec.mask, mask_token)


# -- attention ------------------------------------------------------------------


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise numerics.ShapeError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    d_k = q.shape[-1]
    scores = matmul(q, k.transpose(_swap_last(k.ndim))) * (1.0 / math.sqrt(d_k))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(h: Tensor, n_heads: int,
                         wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor,
                         return_weights: bool = False):
    """Project to H subspaces, attend per head, concatenate, project out."""
    n, t, dm = h.shape
    if dm % n_heads != 0:
        raise ConfigError(f"d_model={dm} not divisible by n_heads={n_heads}")
    dk = dm // n_heads

    def split(x: Tensor) -> Tensor:
        return x.reshape(n, t, n_heads, dk).transpose((0, 2, 1, 3))

    q = split(matmul(h, wq) + bq)
    k = split(matmul(h, wk) + bk)
    v = split(matmul(h, wv) + bv)
    attended, weights = scaled_dot_attention(q, k, v, return_weights=True)
    merged = attended.transpose((0, 2, 1, 3)).reshape(n, t, dm)
    out = matmul(merged, wo) + bo
    return (out, weights) if return_weights else out


# -- the model ------------------------------------------------------------------


class TransformerModel:
    """Encoder plus reconstruction and classification heads.

    Parameters live in an ordered name -> Tensor dict.  A model is safe to
    share for inference; training mutates parameter data in place.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        arrays = init_parameters(config, seed, dtype) if params is None else params
        expected = parameter_shapes(config)
        if set(arrays) != set(expected):
            missing = set(expected) ^ set(arrays)
            raise ConfigError(f"parameter names do not match config: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(arrays[name].shape) != shape:
                raise ConfigError(f"parameter {name!r} has shape {arrays[name].shape}, want {shape}")
        self.params = {name: Tensor(arrays[name], requires_grad=True) for name in expected}

    # parameter access ---------------------------------------------------------

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def set_trainable(self, names: Iterable[str]) -> None:
        wanted = set(names)
        for name, t in self.params.items():
            t.requires_grad = name in wanted

    def trainable(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.params.items() if t.requires_grad}

    @property
    def mask_token(self) -> Tensor:
        return self.params["mask_token"]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    # forward pieces -------------------------------------------------------------

    def embed(self, x) -> Tensor:
        """x w_in + b_in + position table (broadcast over samples)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1:] != (self.config.t_steps, self.config.input_dim):
            raise numerics.ShapeError(
                f"embed expects (n, {self.config.t_steps}, {self.config.input_dim}), got {x.shape}")
        p = self.params
        return matmul(x, p["embed.w"]) + p["embed.b"] + p["embed.pos"]

    def encoder_forward(self, h: Tensor, training: bool = False,
                        rng: np.random.Generator | None = None,
                        return_attn: bool = False):
        """L pre-norm blocks; dropout only on residual branches in training."""
        cfg = self.config
        p = self.params
        if training and cfg.dropout > 0.0 and rng is None:
            rng = np.random.default_rng(0)
        attn_weights = []
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            normed = layer_norm(h, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            attended, weights = multi_head_attention(
                normed, cfg.n_heads,
                p[pre + "attn.wq"], p[pre + "attn.bq"],
                p[pre + "attn.wk"], p[pre + "attn.bk"],
                p[pre + "attn.wv"], p[pre + "attn.bv"],
                p[pre + "attn.wo"], p[pre + "attn.bo"],
                return_weights=True)
            attn_weights.append(weights)
            h = h + dropout(attended, cfg.dropout, rng, training)
            normed = layer_norm(h, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            inner = (matmul(normed, p[pre + "ffn.w1"]) + p[pre + "ffn.b1"]).relu()
            ff = matmul(inner, p[pre + "ffn.w2"]) + p[pre + "ffn.b2"]
            h = h + dropout(ff, cfg.dropout, rng, training)
        return (h, attn_weights) if return_attn else h

    def reconstruct(self, h: Tensor) -> Tensor:
        """Per-position linear map back to input channels."""
        return matmul(h, self.params["recon.w"]) + self.params["recon.b"]

    def classify(self, h: Tensor) -> Tensor:
        """Mean-pool over time, linear head, softmax class probabilities."""
        pooled = h.mean(axis=1)
        logits = matmul(pooled, self.params["head.w"]) + self.params["head.b"]
        return softmax_rows(logits)

    # convenience composites -------------------------------------------------------

    def forward_reconstruction(self, x_masked, training: bool = False,
                               rng: np.random.Generator | None = None) -> Tensor:
        h = self.encoder_forward(self.embed(x_masked), training=training, rng=rng)
        return self.reconstruct(h)

    def forward_probs(self, x, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        h = self.encoder_forward(self.embed(x), training=training, rng=rng)
        return self.classify(h)


@dataclass
class Checkpoint:
    """Config, named weights, and pretraining metadata for phase handoff."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    pretrain_epochs: int = 0
    pretrain_final_loss: float | None = None


def count_complexity(cfg: ModelConfig) -> tuple[int, int]:
    """Exact trainable-scalar count and per-sample multiply-accumulates.

    MACs closed form: input/position embedding t*d*d_model; per encoder
    layer 4*t*d_model^2 (q/k/v/out projections) + 2*h*t^2*(d_model/h)
    (scores and the weighted sum) + 2*t*d_model*d_ff (feed-forward); plus
    t*d_model*d for the reconstruction head and d_model*n_classes for the
    classification head.  Layer norms, softmax, and bias adds are not
    counted (additions, not multiply-accumulates).
    """
    t, d, dm, h, dff = cfg.t_steps, cfg.input_dim, cfg.d_model, cfg.n_heads, cfg.d_ff
    params = (d * dm + dm                       # input projection
              + t * dm                          # position table
              + d)                              # mask token
    per_layer = (2 * dm                         # ln1
                 + 4 * dm * dm + 4 * dm         # attention projections
                 + 2 * dm                       # ln2
                 + dm * dff + dff + dff * dm + dm)
    params += cfg.n_layers * per_layer
    params += dm * d + d                        # reconstruction head
    params += dm * cfg.n_classes + cfg.n_classes

    macs = t * d * dm
    macs += cfg.n_layers * (4 * t * dm * dm
                            + 2 * h * t * t * (dm // h)
                            + 2 * t * dm * dff)
    macs += t * dm * d
    macs += dm * cfg.n_classes
    return params, macs
