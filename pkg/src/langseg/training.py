"""Training loop: per-pixel cross-entropy over label scores, SGD with
momentum, polynomial learning-rate decay.

The text side stays frozen for the whole run; only image-encoder and
regularizer weights move. Each sample carries the full label set of its
source dataset, so datasets with different vocabularies mix freely in one
run.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, LabelSet, embed_labels
from .model import ModelParameters, forward_scores
from .tensor import DenseMap, GradTape, NumericError


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float
    max_steps: int
    batch_size: int = 1
    momentum: float = 0.9
    poly_power: float = 0.9
    temperature: float = 0.07
    seed: int = 0
    ignore_index: int | None = 255

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class TrainSample:
    image: np.ndarray       # (H, W, 3) reals in [0, 1]
    target: np.ndarray      # (H, W) label indices into label_set
    label_set: LabelSet


@dataclass(frozen=True)
class HistoryRow:
    step: int
    lr: float
    loss: float


def pixel_ce_loss(scores: DenseMap, target: np.ndarray, temperature: float,
                  ignore_index: int | None = None,
                  tape: GradTape | None = None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(scores / temperature) against target.

    Pixels labeled ignore_index contribute neither loss nor gradient. Returns
    (loss, d_loss/d_scores); when a tape is given the gradient is also
    recorded so a later backward() seeds scores.grad with it.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    y = np.asarray(target)
    if y.shape != (scores.height, scores.width):
        raise ValueError(
            f"target shape {y.shape} != score map {scores.height}x{scores.width}"
        )
    n = scores.channels
    if ignore_index is None:
        mask = np.ones(y.shape, dtype=bool)
    else:
        mask = y != ignore_index
    count = int(mask.sum())
    if count == 0:
        raise ValueError("every pixel is ignored; loss undefined")
    labels = y[mask]
    if labels.min() < 0 or labels.max() >= n:
        raise ValueError(
            f"target indices must be in [0, {n}) or ignore_index, "
            f"found range [{labels.min()}, {labels.max()}]"
        )
    z = scores.values / temperature
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in loss")

    zmax = z.max(axis=2, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=2, keepdims=True)
    softmax = ez / denom
    # log p_y = z_y - zmax - log(denom), evaluated only at kept pixels
    y_safe = np.where(mask, y, 0).astype(np.int64)
    z_y = np.take_along_axis(z, y_safe[..., None], axis=2)[..., 0]
    logp_y = z_y - zmax[..., 0] - np.log(denom[..., 0])
    loss = float(-(logp_y[mask]).sum() / count)

    dz = softmax.copy()
    np.put_along_axis(
        dz, y_safe[..., None],
        np.take_along_axis(dz, y_safe[..., None], axis=2) - 1.0, axis=2,
    )
    dz[~mask] = 0.0
    dscores = (dz / (count * temperature)).astype(scores.values.dtype)
    if tape is not None:
        def backward():
            scores.ensure_grad()
            scores.grad += dscores
        tape.record(backward)
    return loss, dscores


def poly_lr(step: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - step/max_steps)^poly_power, reaching 0 at max_steps."""
    if cfg.max_steps < 1:
        raise ValueError("poly_lr needs max_steps >= 1")
    if step < 0 or step > cfg.max_steps:
        raise ValueError(f"step {step} outside [0, {cfg.max_steps}]")
    return cfg.base_lr * (1.0 - step / cfg.max_steps) ** cfg.poly_power


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float,
             ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """One classical-momentum update: v <- m*v + g; p <- p - lr*v.

    Purely functional: inputs are untouched, fresh dicts come back.
    """
    if params.keys() != grads.keys() or params.keys() != velocity.keys():
        raise ValueError("params, grads and velocity must share the same keys")
    new_params: dict[str, np.ndarray] = {}
    new_velocity: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}; step aborted")
        v = momentum * velocity[name] + g
        new_velocity[name] = v
        new_params[name] = p - lr * v
    return new_params, new_velocity


def dataset_loss(model: ModelParameters, table: EmbeddingTable,
                 samples: Sequence[TrainSample], cfg: TrainConfig) -> float:
    """Mean per-sample loss with current weights; no gradients, no updates."""
    total = 0.0
    for s in samples:
        matrix = embed_labels(table, s.label_set)
        scores = forward_scores(model, s.image, matrix)
        loss, _ = pixel_ce_loss(scores, s.target, cfg.temperature, cfg.ignore_index)
        total += loss
    return total / len(samples)


def train(model: ModelParameters, table: EmbeddingTable,
          dataset: Sequence[TrainSample], cfg: TrainConfig,
          ) -> tuple[ModelParameters, list[HistoryRow]]:
    """Optimize model weights in place; returns (model, per-step history).

    Deterministic for a fixed (model init, dataset order, cfg.seed). The
    embedding table is read-only throughout; a changed digest aborts.
    """
    if cfg.max_steps > 0 and not dataset:
        raise ValueError("cannot train on an empty dataset")
    digest_before = table.digest()
    matrices = {s.label_set.labels: embed_labels(table, s.label_set) for s in dataset}
    velocity = {name: np.zeros_like(p.values) for name, p in model.params.items()}
    rng = np.random.default_rng(cfg.seed)
    history: list[HistoryRow] = []

    for step in range(cfg.max_steps):
        picks = rng.integers(0, len(dataset), size=cfg.batch_size)
        model.zero_grads()
        batch_loss = 0.0
        for idx in picks:
            sample = dataset[int(idx)]
            tape = GradTape()
            scores = forward_scores(model, sample.image, matrices[sample.label_set.labels], tape)
            loss, _ = pixel_ce_loss(scores, sample.target, cfg.temperature,
                                    cfg.ignore_index, tape)
            tape.backward()
            batch_loss += loss
        batch_loss /= cfg.batch_size

        lr = poly_lr(step, cfg)
        values = {name: p.values for name, p in model.params.items()}
        grads = {name: p.ensure_grad() / cfg.batch_size for name, p in model.params.items()}
        values, velocity = sgd_step(values, grads, velocity, lr, cfg.momentum)
        for name, p in model.params.items():
            p.values = values[name]
        history.append(HistoryRow(step=step, lr=lr, loss=batch_loss))

    if table.digest() != digest_before:
        raise RuntimeError("embedding table changed during training; it must stay frozen")
    model.validate_finite()
    return model, history


# ---------------------------------------------------------------------------
# config files and history CSV
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(TrainConfig)}


def parse_train_config(path) -> TrainConfig:
    """Read a flat key = value file; keys are exactly the TrainConfig fields."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in _FIELD_TYPES:
                known = ", ".join(sorted(_FIELD_TYPES))
                raise ValueError(f"{path}:{lineno}: unknown key {key!r} (known: {known})")
            if key in raw:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value

    kwargs = {}
    for key, value in raw.items():
        if key in ("max_steps", "batch_size", "seed"):
            kwargs[key] = int(value)
        elif key == "ignore_index":
            kwargs[key] = None if value.lower() in ("none", "") else int(value)
        else:
            kwargs[key] = float(value)
    required = {"base_lr", "max_steps"} - kwargs.keys()
    if required:
        raise ValueError(f"{path}: missing required keys: {', '.join(sorted(required))}")
    return TrainConfig(**kwargs)


def write_history(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for row in history:
            writer.writerow([row.step, repr(row.lr), repr(row.loss)])


def read_history(path) -> list[HistoryRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["step", "lr", "loss"]:
            raise ValueError(f"{path}: unexpected history header {header}")
        return [HistoryRow(int(s), float(lr), float(loss)) for s, lr, loss in reader]
