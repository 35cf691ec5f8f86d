"""Patch datasets and the minibatch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as net
from .dsp import normalize_gather
from .gather import Gather
from .model import ModelParams, ModelSpec
from .synthetics import make_ringing
from .tensor_core import AdamState, adam_step, mse_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A non-finite loss or parameter appeared during training."""


@dataclass
class TrainPair:
    input_patch: np.ndarray  # ringing
    label_patch: np.ndarray  # clean
    gather_id: int
    offset: tuple[int, int]  # (t, x) of the top-left sample


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    patch: int = 64
    stride: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch < 1:
            raise ValueError(f"patch must be >= 1, got {self.patch}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ValueError("checkpoint_every needs checkpoint_dir")


@dataclass
class LossLog:
    steps: list[tuple[int, int, float]] = field(default_factory=list)  # (step, epoch, loss)
    epoch_means: list[float] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([loss for _, _, loss in self.steps])


def patch_count(n_t: int, n_x: int, patch: int, stride: int) -> int:
    if n_t < patch or n_x < patch:
        return 0
    return ((n_t - patch) // stride + 1) * ((n_x - patch) // stride + 1)


def extract_patches(
    ringing: Gather, clean: Gather, patch: int = 64, stride: int = 32, gather_id: int = 0
) -> list[TrainPair]:
    """Aligned sliding-window patches, origins on the stride grid, fully inside."""
    if ringing.data.shape != clean.data.shape:
        raise ValueError(
            f"gathers not aligned: {ringing.data.shape} vs {clean.data.shape}"
        )
    if patch < 1 or stride < 1:
        raise ValueError(f"patch and stride must be >= 1, got {patch}, {stride}")
    n_t, n_x = clean.data.shape
    if n_t < patch or n_x < patch:
        raise ValueError(f"gather {n_t}x{n_x} is smaller than the {patch}x{patch} patch")
    pairs = []
    for t in range(0, n_t - patch + 1, stride):
        for x in range(0, n_x - patch + 1, stride):
            win = (slice(t, t + patch), slice(x, x + patch))
            pairs.append(
                TrainPair(
                    np.array(ringing.data[win], dtype=np.float32),
                    np.array(clean.data[win], dtype=np.float32),
                    gather_id,
                    (t, x),
                )
            )
    return pairs


def build_dataset(
    clean_gathers: Sequence[Gather],
    lo: float = 6.0,
    hi: float = 72.0,
    patch: int = 64,
    stride: int = 32,
    scale_from: str = "ringing",
) -> list[TrainPair]:
    """Band-pass each clean gather and cut both into patches.

    Input and label share one max-abs scale per gather.  ``scale_from="ringing"``
    takes it from the band-passed input, which is what inference divides by,
    so the network sees identically scaled data in both phases; labels may
    then exceed 1 in magnitude at event peaks.  ``"clean"`` uses the label's
    own max-abs instead.
    """
    if scale_from not in ("ringing", "clean"):
        raise ValueError(f"scale_from must be 'ringing' or 'clean', got {scale_from!r}")
    pairs: list[TrainPair] = []
    for gid, clean in enumerate(clean_gathers):
        ringing = make_ringing(clean, lo, hi)
        ref = ringing if scale_from == "ringing" else clean
        _, scale = normalize_gather(ref)
        if scale == 0:
            log.warning("skipping gather %d: no energy to normalize", gid)
            continue
        pairs.extend(
            extract_patches(
                Gather(ringing.data / scale, clean.dt, clean.dx),
                Gather(clean.data / scale, clean.dt, clean.dx),
                patch,
                stride,
                gid,
            )
        )
    return pairs


def _write_checkpoint(params: ModelParams, config: TrainConfig, epoch: int) -> None:
    from .io import write_weights

    out = Path(config.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_weights(params, out / f"epoch{epoch:03d}.vsw")


def train(
    spec: ModelSpec,
    params: ModelParams,
    dataset: Sequence[TrainPair],
    config: TrainConfig,
    progress: bool = False,
) -> tuple[ModelParams, LossLog]:
    """Minimize patch MSE with Adam; ``params`` are updated in place and returned."""
    config.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps_opt)
    inputs = np.stack([p.input_patch for p in dataset])[:, None]
    labels = np.stack([p.label_patch for p in dataset])[:, None]
    dtype = params.convs[0].kernels.dtype
    inputs, labels = inputs.astype(dtype), labels.astype(dtype)
    n = len(dataset)
    loss_log = LossLog()
    step = 0
    params.zero_grad()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            out, cache = net.forward(spec, params, inputs[idx], mode="train")
            loss, grad = mse_loss(out, labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at step {step} (epoch {epoch})")
            net.backward(spec, params, cache, grad)
            adam_step([(v, g) for _, v, g in params.parameters()], state)
            params.zero_grad()
            loss_log.steps.append((step, epoch, loss))
            total += loss * len(idx)
            seen += len(idx)
            step += 1
        for name, value, _ in params.parameters():
            if not np.all(np.isfinite(value)):
                raise TrainingDiverged(f"non-finite values in {name} after epoch {epoch}")
        loss_log.epoch_means.append(total / seen)
        if progress:
            log.info("epoch %d/%d  mean loss %.6g", epoch, config.epochs, total / seen)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _write_checkpoint(params, config, epoch)
    params.set_mode("infer")
    return params, loss_log
