"""Training loop: shuffled mini-batches, Adam, per-epoch val OA, best-val state.

Loss is cross-entropy on the center-token logits. A non-finite loss aborts
immediately, naming the epoch and batch. Evaluation runs with the tape off
and dropout disabled, so scoring the same parameters twice gives identical
predictions.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, HsiCube, Splits, extract_patch
from .metrics import EvalReport, confusion_matrix
from .model import Model
from .optim import Adam
from .tensor import Tensor, no_grad

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "cross_entropy",
    "clip_gradients",
    "patches_at",
    "labels_at",
    "train",
    "predict",
    "evaluate_split",
    "write_train_log",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message names the offending batch."""


@dataclass
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 200
    batch: int = 32
    seed: int = 0
    eval_batch: int = 256
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = None
    early_stop_val_oa: float | None = None
    patience: int | None = None


@dataclass
class TrainResult:
    log: list[tuple[int, float, float]]     # (epoch, train_loss, val_oa)
    best_val_oa: float
    best_epoch: int
    best_state: dict[str, np.ndarray]
    epochs_run: int
    stopped_early: bool
    runtime_seconds: float


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of 0-based target indices under row logits.

    Targets live in logit-column space (0..K-1); callers translate class
    ids (1..K) before getting here.
    """
    labels = np.asarray(targets, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"targets shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("target id outside logit range")
    # log-sum-exp with a detached shift; the shift's own gradient is
    # identically zero, so detaching it is exact
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - shift.broadcast_to(logits.shape)
    lse = z.exp().sum(axis=1, keepdims=True).log() + shift
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    picked = (logits * Tensor(onehot)).sum(axis=1, keepdims=True)
    return (lse - picked).mean()


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their joint 2-norm is at most ``max_norm``.

    Returns the pre-clip norm. Rescaling is a single deterministic factor,
    so clipped training stays bitwise reproducible.
    """
    total = 0.0
    for p in params:
        g = p.tensor.grad
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.tensor.grad *= scale
    return norm


def patches_at(cube: HsiCube, indices: np.ndarray, patch_size: int) -> np.ndarray:
    """Stack zero-padded patches for flat row-major pixel indices.

    Centers must be labeled pixels; samples are only defined where the
    ground truth is known.
    """
    out = np.zeros((len(indices), patch_size, patch_size, cube.bands))
    labels_flat = cube.labels.ravel()
    for i, flat in enumerate(np.asarray(indices, dtype=np.int64)):
        r, c = divmod(int(flat), cube.width)
        if labels_flat[flat] == 0:
            raise DataError(f"pixel ({r},{c}) is unlabeled; cannot form a sample")
        out[i] = extract_patch(cube.data, r, c, patch_size)
    return out


def labels_at(cube: HsiCube, indices: np.ndarray) -> np.ndarray:
    return cube.labels.ravel()[np.asarray(indices, dtype=np.int64)]


def predict(model: Model, cube: HsiCube, indices: np.ndarray,
            batch: int = 256) -> np.ndarray:
    """Predicted class id (1..K) per pixel index, scored with the tape off."""
    indices = np.asarray(indices, dtype=np.int64)
    preds = np.empty(len(indices), dtype=np.int64)
    with no_grad():
        for s in range(0, len(indices), batch):
            chunk = indices[s:s + batch]
            logits = model.forward(patches_at(cube, chunk, model.cfg.patch_size))
            preds[s:s + batch] = logits.data.argmax(axis=1) + 1
    return preds


def train(model: Model, cube: HsiCube, splits: Splits, cfg: TrainConfig) -> TrainResult:
    started = time.perf_counter()
    seq = np.random.SeedSequence(cfg.seed)
    shuffle_seq, dropout_seq = seq.spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
    dropout_rng = np.random.Generator(np.random.PCG64(dropout_seq))

    train_idx = np.asarray(splits.train, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty training split")
    train_patches = patches_at(cube, train_idx, model.cfg.patch_size)
    train_labels = labels_at(cube, train_idx)
    val_idx = np.asarray(splits.val, dtype=np.int64)
    val_labels = labels_at(cube, val_idx)

    opt = Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    log: list[tuple[int, float, float]] = []
    best_val, best_epoch = -1.0, 0
    best_state = model.state_arrays()
    stopped_early = False

    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(len(train_idx))
        total_loss, seen = 0.0, 0
        for bi, s in enumerate(range(0, len(perm), cfg.batch)):
            sel = perm[s:s + cfg.batch]
            rng = dropout_rng if model.cfg.dropout > 0.0 else None
            try:
                logits = model.forward(train_patches[sel], dropout_rng=rng)
                loss = cross_entropy(logits, train_labels[sel] - 1)
                value = loss.item()
            except ValueError as exc:
                # overflowing activations surface as non-finite tensor
                # construction inside the loss; report them as divergence
                if "non-finite" not in str(exc):
                    raise
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}") from exc
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            if cfg.clip_norm is not None:
                clip_gradients(model.parameters(), cfg.clip_norm)
            opt.step()
            total_loss += value * len(sel)
            seen += len(sel)
        epoch_loss = total_loss / seen

        if val_idx.size:
            val_preds = predict(model, cube, val_idx, batch=cfg.eval_batch)
            val_oa = float(np.mean(val_preds == val_labels))
        else:
            val_oa = float("nan")
        log.append((epoch, epoch_loss, val_oa))

        if val_idx.size and val_oa > best_val:
            best_val, best_epoch = val_oa, epoch
            best_state = model.state_arrays()
        if cfg.early_stop_val_oa is not None and val_oa >= cfg.early_stop_val_oa:
            stopped_early = True
            break
        if cfg.patience is not None and epoch - best_epoch >= cfg.patience:
            stopped_early = True
            break

    return TrainResult(log=log, best_val_oa=best_val, best_epoch=best_epoch,
                       best_state=best_state, epochs_run=len(log),
                       stopped_early=stopped_early,
                       runtime_seconds=time.perf_counter() - started)


def evaluate_split(model: Model, cube: HsiCube, indices: np.ndarray,
                   batch: int = 256, config: dict | None = None,
                   flops: dict | None = None) -> EvalReport:
    started = time.perf_counter()
    preds = predict(model, cube, indices, batch=batch)
    truth = labels_at(cube, indices)
    # metrics index categories from 0; shift class ids down at the boundary
    cm = confusion_matrix(truth - 1, preds - 1, model.cfg.classes)
    return EvalReport.from_confusion(
        cm, config=config, flops=flops,
        runtime_seconds=time.perf_counter() - started)


def write_train_log(path: str | Path, log: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_oa"])
        for epoch, loss, oa in log:
            writer.writerow([epoch, repr(float(loss)), repr(float(oa))])
