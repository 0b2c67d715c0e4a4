"""Losses and the two-phase procedure: masked pretraining, then linear probing.

Pretraining minimizes mean absolute reconstruction error with fresh random
masks per batch; probing freezes every pretrained parameter and trains only
a newly initialized classification head against cross-entropy.  Everything
is deterministic given (seed, data, config, precision).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .feature_engine import FeatureTensor
from .model import (Checkpoint, HEAD_PARAMS, MaskSpec, ModelConfig, TransformerModel,
                    apply_mask, generate_mask_spec, init_head, parameter_shapes)
from .numerics import AdamState, Tensor, adam_step, matmul, softmax_rows

PROB_CLAMP = 1e-12


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite during an epoch."""


class CheckpointError(ValueError):
    """A checkpoint directory is missing, corrupt, or inconsistent."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    loss_scope: str = "full"        # or "masked_only"
    label_fraction: float = 1.0
    precision: str = "f32"          # or "f64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_scope not in ("full", "masked_only"):
            raise ValueError(f"loss_scope must be 'full' or 'masked_only', got {self.loss_scope!r}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class LogEntry:
    phase: str
    epoch: int
    loss: float
    seconds: float


@dataclass
class TrainLog:
    entries: list[LogEntry] = field(default_factory=list)

    def losses(self) -> list[float]:
        return [e.loss for e in self.entries]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps({"phase": e.phase, "epoch": e.epoch,
                                     "loss": e.loss, "seconds": e.seconds})
                         for e in self.entries) + ("\n" if self.entries else "")

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


# -- losses ----------------------------------------------------------------------


def mae_loss(x: Tensor, x_r: Tensor, mask: MaskSpec | None = None) -> Tensor:
    """Mean absolute deviation over the whole tensor, or over masked cells.

    With a mask, the mean runs over masked time steps times all channels.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    x_r = x_r if isinstance(x_r, Tensor) else Tensor(x_r)
    if x.shape != x_r.shape:
        raise numerics.ShapeError(f"mae_loss shapes disagree: {x.shape} vs {x_r.shape}")
    diff = (x - x_r).abs()
    if mask is None:
        return diff.mean()
    n_masked = mask.n_masked
    if n_masked == 0:
        raise ValueError("masked-only loss with zero masked cells")
    weights = mask.mask[..., None].astype(x.dtype)
    return (diff * Tensor(weights)).sum() * (1.0 / (n_masked * x.shape[-1]))


def ce_loss(labels, probs: Tensor) -> Tensor:
    """Mean negative log-probability of the true class, clamp at 1e-12."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    y = np.asarray([int(v) for v in labels])
    if probs.ndim != 2 or y.shape[0] != probs.shape[0]:
        raise numerics.ShapeError(f"ce_loss got labels {y.shape} and probs {probs.shape}")
    onehot = np.zeros(probs.shape, dtype=probs.dtype)
    onehot[np.arange(y.size), y] = 1.0
    logp = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP).log()
    return (logp * Tensor(onehot)).sum() * (-1.0 / y.size)


# -- training loops -----------------------------------------------------------------


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def step_params(params: dict[str, Tensor], state: AdamState) -> None:
    """Adam-update every tensor that received a gradient this step.

    Parameters off the loss path (gradient None) have a zero gradient,
    which under Adam is exactly a no-op, so they are skipped.
    """
    active = {k: t for k, t in params.items() if t.grad is not None}
    adam_step({k: t.data for k, t in active.items()},
              {k: t.grad for k, t in active.items()}, state)


def _mask_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, 0xA5C, epoch, batch]).generate_state(1)[0])


def pretrain(tensor: FeatureTensor, mcfg: ModelConfig, tcfg: TrainConfig,
             ) -> tuple[Checkpoint, TrainLog]:
    """Masked-reconstruction pretraining; labels are never touched.

    Each batch draws a fresh mask (seeded by epoch and batch index), runs
    embed -> encoder -> reconstruct, and takes one Adam step against the
    MAE loss at the configured scope.
    """
    if (tensor.t, tensor.d) != (mcfg.t_steps, mcfg.input_dim):
        raise ValueError(f"tensor is {tensor.t}x{tensor.d}, config wants "
                         f"{mcfg.t_steps}x{mcfg.input_dim}")
    dtype = tcfg.dtype
    x_all = tensor.values.astype(dtype)
    model = TransformerModel(mcfg, seed=tcfg.seed, dtype=dtype)
    state = AdamState(lr=tcfg.lr)
    drop_rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0xD0]))
    log = TrainLog()
    final_loss = math.nan
    for epoch in range(1, tcfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence([tcfg.seed, 0x5F, epoch])).permutation(tensor.n)
        loss_sum, seen = 0.0, 0
        for bi, idx in enumerate(_batches(tensor.n, tcfg.batch_size, order)):
            xb = Tensor(x_all[idx])
            spec = generate_mask_spec(len(idx), tensor.t, mcfg.mask_ratio, mcfg.mask_mean_len,
                                      _mask_seed(tcfg.seed, epoch, bi))
            x_masked = apply_mask(xb, spec, model.mask_token)
            x_rec = model.forward_reconstruction(x_masked, training=True, rng=drop_rng)
            loss = mae_loss(xb, x_rec, mask=spec if tcfg.loss_scope == "masked_only" else None)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"pretraining loss became {value} at epoch {epoch}")
            model.zero_grads()
            loss.backward()
            step_params(model.trainable(), state)
            loss_sum += value * len(idx)
            seen += len(idx)
        final_loss = loss_sum / seen
        log.entries.append(LogEntry("pretrain", epoch, final_loss,
                                    time.perf_counter() - started))
    ckpt = Checkpoint(config=mcfg, params=model.param_arrays(),
                      pretrain_epochs=tcfg.epochs, pretrain_final_loss=final_loss)
    return ckpt, log


def _select_label_subset(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Per class, keep floor(count * fraction) row indices, seeded."""
    if fraction >= 1.0:
        return np.arange(labels.size)
    keep: list[np.ndarray] = []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1AB]))
    for cls in sorted(set(labels.tolist())):
        rows = np.flatnonzero(labels == cls)
        n_keep = int(math.floor(rows.size * fraction))
        keep.append(rng.permutation(rows)[:n_keep])
    return np.sort(np.concatenate(keep))


def finetune(tensor: FeatureTensor, ckpt: Checkpoint, tcfg: TrainConfig,
             ) -> tuple[TransformerModel, TrainLog]:
    """Linear probing: frozen encoder, fresh head trained with cross-entropy.

    Every checkpoint parameter except the head is loaded and never updated.
    Since the encoder is frozen (and runs in eval mode), its pooled outputs
    are computed once and the head trains on the cached features.
    """
    if not tensor.fully_labeled():
        raise ValueError("finetune needs a fully labeled tensor")
    if (tensor.t, tensor.d) != (ckpt.config.t_steps, ckpt.config.input_dim):
        raise ValueError(f"tensor is {tensor.t}x{tensor.d}, checkpoint wants "
                         f"{ckpt.config.t_steps}x{ckpt.config.input_dim}")
    dtype = tcfg.dtype
    params = {k: v.astype(dtype) for k, v in ckpt.params.items()}
    params.update(init_head(ckpt.config, tcfg.seed, dtype))
    model = TransformerModel(ckpt.config, params=params)
    model.set_trainable(HEAD_PARAMS)

    labels = np.array([int(s) for s in tensor.labels])
    rows = _select_label_subset(labels, tcfg.label_fraction, tcfg.seed)
    with numerics.no_grad():
        h = model.encoder_forward(model.embed(tensor.values[rows].astype(dtype)))
        features = h.mean(axis=1).data
    y = labels[rows]

    head_w, head_b = model.params["head.w"], model.params["head.b"]
    state = AdamState(lr=tcfg.lr)
    log = TrainLog()
    for epoch in range(1, tcfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence([tcfg.seed, 0xF1, epoch])).permutation(y.size)
        loss_sum, seen = 0.0, 0
        for idx in _batches(y.size, tcfg.batch_size, order):
            probs = softmax_rows(matmul(Tensor(features[idx]), head_w) + head_b)
            loss = ce_loss(y[idx], probs)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"probing loss became {value} at epoch {epoch}")
            head_w.zero_grad()
            head_b.zero_grad()
            loss.backward()
            adam_step({"head.w": head_w.data, "head.b": head_b.data},
                      {"head.w": head_w.grad, "head.b": head_b.grad}, state)
            loss_sum += value * len(idx)
            seen += len(idx)
        log.entries.append(LogEntry("finetune", epoch, loss_sum / seen,
                                    time.perf_counter() - started))
    return model, log


# -- checkpoint persistence ------------------------------------------------------------
#
# A checkpoint directory holds meta.json (config, named shapes, pretrain
# metadata) and weights.bin (little-endian float32 concatenated in the
# parameter_shapes() name order).


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(ckpt: Checkpoint, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = parameter_shapes(ckpt.config)
    if set(ckpt.params) != set(shapes):
        raise CheckpointError("checkpoint parameter names do not match its config")
    meta = {
        "config": ckpt.config.to_dict(),
        "params": [{"name": n, "shape": list(s)} for n, s in shapes.items()],
        "pretrain": {"epochs": ckpt.pretrain_epochs, "final_loss": ckpt.pretrain_final_loss},
    }
    blob = b"".join(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes() for n in shapes)
    _atomic_write(directory / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
    _atomic_write(directory / "weights.bin", blob)


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    meta_path, weights_path = directory / "meta.json", directory / "weights.bin"
    if not meta_path.exists() or not weights_path.exists():
        raise CheckpointError(f"no checkpoint at {directory} (need meta.json and weights.bin)")
    try:
        meta = json.loads(meta_path.read_text())
        config = ModelConfig.from_dict(meta["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint meta at {meta_path}: {exc}") from None
    shapes = parameter_shapes(config)
    declared = [(p["name"], tuple(p["shape"])) for p in meta["params"]]
    if declared != list(shapes.items()):
        raise CheckpointError(f"checkpoint meta at {meta_path} declares unexpected parameters")
    blob = np.frombuffer(weights_path.read_bytes(), dtype="<f4")
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if blob.size != expected:
        raise CheckpointError(f"weights.bin holds {blob.size} floats, expected {expected}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = blob[offset:offset + size].reshape(shape).astype(np.float32)
        offset += size
    pre = meta.get("pretrain", {})
    return Checkpoint(config=config, params=params,
                      pretrain_epochs=int(pre.get("epochs", 0)),
                      pretrain_final_loss=pre.get("final_loss"))
