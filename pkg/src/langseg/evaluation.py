"""Segmentation metrics, the fold-based zero-shot protocol, and ablation
harnesses.

All metrics run on an integer confusion matrix (rows = ground truth, columns
= prediction), so they are exact, mergeable across workers, and invariant
under simultaneous relabeling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

IGNORE_INDEX = 255


class MetricError(ValueError):
    """A metric is undefined for the given counts (e.g. nothing evaluated)."""


class ConfusionMatrix:
    """N x N count matrix accumulated from (ground truth, prediction) maps."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes):
                raise ValueError(f"counts must be {num_classes}x{num_classes}")
            if (counts < 0).any():
                raise ValueError("counts must be non-negative")
        self.counts = counts

    def add(self, gt: np.ndarray, pred: np.ndarray,
            ignore_index: int | None = IGNORE_INDEX) -> "ConfusionMatrix":
        gt = np.asarray(gt).ravel()
        pred = np.asarray(pred).ravel()
        if gt.shape != pred.shape:
            raise ValueError(f"gt size {gt.shape} != pred size {pred.shape}")
        if ignore_index is not None:
            keep = gt != ignore_index
            gt, pred = gt[keep], pred[keep]
        n = self.num_classes
        if gt.size:
            if gt.min() < 0 or gt.max() >= n:
                raise ValueError(f"ground-truth index outside [0, {n})")
            if pred.min() < 0 or pred.max() >= n:
                raise ValueError(f"prediction index outside [0, {n})")
            flat = np.bincount(gt * n + pred, minlength=n * n)
            self.counts += flat.reshape(n, n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix)
                and self.num_classes == other.num_classes
                and np.array_equal(self.counts, other.counts))


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN where the class has an empty union."""
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    union = c.sum(axis=0) + c.sum(axis=1) - np.diag(c)
    out = np.full(cm.num_classes, np.nan)
    nz = union > 0
    out[nz] = tp[nz] / union[nz]
    return out


def miou(cm: ConfusionMatrix,
         include: Sequence[int] | None = None) -> tuple[float, np.ndarray]:
    """Mean IoU and the per-class IoUs (NaN marks an excluded empty class).

    include restricts the mean to the given class indices; classes with an
    empty union are always left out of the mean.
    """
    ious = per_class_iou(cm)
    if include is not None:
        chosen = np.zeros(cm.num_classes, dtype=bool)
        chosen[list(include)] = True
    else:
        chosen = np.ones(cm.num_classes, dtype=bool)
    valid = chosen & ~np.isnan(ious)
    if not valid.any():
        raise MetricError("mIoU undefined: every considered class is empty")
    # summing in sorted order makes the mean independent of class numbering
    return float(np.sort(ious[valid]).mean()), ious


def fb_iou(cm: ConfusionMatrix, foreground: Sequence[int]) -> float:
    """Mean of foreground and background IoUs, ignoring class distinctions.

    Classes listed in foreground count as foreground, everything else as
    background. A side with an empty union is dropped from the mean.
    """
    fg = np.zeros(cm.num_classes, dtype=bool)
    fg[list(foreground)] = True
    if fg.all():
        raise ValueError("at least one class must remain background")
    c = cm.counts
    b = np.zeros((2, 2), dtype=np.int64)
    for gi, gmask in enumerate((~fg, fg)):
        for pi, pmask in enumerate((~fg, fg)):
            b[gi, pi] = c[np.ix_(gmask, pmask)].sum()
    mean, _ = miou(ConfusionMatrix(2, b))
    return mean


def pixacc(cm: ConfusionMatrix) -> float:
    total = cm.total()
    if total == 0:
        raise MetricError("pixel accuracy undefined: no pixels evaluated")
    return float(np.trace(cm.counts) / total)


# ---------------------------------------------------------------------------
# fold protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSpec:
    """Strided split of a class list into folds of near-equal size."""

    classes: tuple[str, ...]
    fold_count: int = 4
    index: int = 0

    def __post_init__(self):
        if self.fold_count < 1:
            raise ValueError(f"fold_count must be >= 1, got {self.fold_count}")
        if not 0 <= self.index < self.fold_count:
            raise ValueError(f"fold index {self.index} outside [0, {self.fold_count})")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")
        if len(self.classes) < self.fold_count:
            raise ValueError("need at least one class per fold")

    def fold_classes(self) -> tuple[str, ...]:
        return self.classes[self.index::self.fold_count]

    def seen_classes(self) -> tuple[str, ...]:
        held = set(self.fold_classes())
        return tuple(c for c in self.classes if c not in held)


@dataclass(frozen=True)
class ZeroShotFoldResult:
    fold_index: int
    miou: float
    fb_iou: float
    chance_miou: float
    per_class: dict[str, float]


def chance_confusion(cm: ConfusionMatrix, other_index: int) -> ConfusionMatrix:
    """Counts the constant-"other" predictor would have produced on the same
    ground truth (every row mass moved onto the other column)."""
    chance = np.zeros_like(cm.counts)
    chance[:, other_index] = cm.counts.sum(axis=1)
    return ConfusionMatrix(cm.num_classes, chance)


def zero_shot_fold_eval(
    fold: FoldSpec,
    train_fn: Callable[[tuple[str, ...]], object],
    eval_fn: Callable[[object, tuple[str, ...]], tuple[ConfusionMatrix, Sequence[str], int]],
) -> ZeroShotFoldResult:
    """Train without the fold's classes, evaluate on scenes made of them.

    train_fn receives only the seen class names (the held-out names never
    reach it) and returns a trained model. eval_fn receives the model plus
    the held-out names and returns (confusion matrix, label names in matrix
    order, index of "other"). The fold mIoU averages over "other" plus the
    held-out classes; the chance baseline is the same metric for a predictor
    that always answers "other".
    """
    seen = fold.seen_classes()
    if not seen:
        raise ValueError("degenerate fold: no classes left to train on")
    model = train_fn(seen)
    held = fold.fold_classes()
    cm, names, other_index = eval_fn(model, held)
    names = list(names)
    if len(names) != cm.num_classes:
        raise ValueError("label names do not match confusion matrix size")
    missing = [c for c in held if c not in names]
    if missing:
        raise ValueError(f"fold classes missing from evaluation labels: {missing}")
    include = [other_index] + [names.index(c) for c in held]
    mean, ious = miou(cm, include=include)
    chance, _ = miou(chance_confusion(cm, other_index), include=include)
    fb = fb_iou(cm, foreground=[names.index(c) for c in held])
    per_class = {names[i]: float(ious[i]) for i in include if not np.isnan(ious[i])}
    return ZeroShotFoldResult(
        fold_index=fold.index, miou=mean, fb_iou=fb,
        chance_miou=chance, per_class=per_class,
    )


# ---------------------------------------------------------------------------
# ablation harnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    kind: str
    depth: int
    pixacc: float
    miou: float


DEPTHS = (0, 1, 2, 4)
KINDS = ("depthwise", "bottleneck")


def ablation_depth(run_fn: Callable[[str, int], tuple[float, float]],
                   kinds: Sequence[str] = KINDS,
                   depths: Sequence[int] = DEPTHS) -> list[AblationRow]:
    """Run identical training for every (block kind, depth) pair.

    run_fn(kind, depth) -> (pixacc, miou) with everything else held fixed.
    """
    rows = []
    for kind in kinds:
        for depth in depths:
            pa, mi = run_fn(kind, depth)
            rows.append(AblationRow(kind=kind, depth=depth, pixacc=pa, miou=mi))
    return rows


@dataclass(frozen=True)
class EmbedDimRow:
    dim: int
    pixacc: float
    miou: float


def ablation_embed_dim(run_fn: Callable[[int], tuple[float, float]],
                       dims: Sequence[int] = (16, 64, 128)) -> list[EmbedDimRow]:
    """Sweep the embedding dimension with a matched encoder projection."""
    rows = []
    for d in dims:
        pa, mi = run_fn(d)
        rows.append(EmbedDimRow(dim=d, pixacc=pa, miou=mi))
    return rows


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_fold_report_csv(results: Sequence[ZeroShotFoldResult], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "miou", "fb_iou", "chance_miou"])
        for r in results:
            writer.writerow([r.fold_index, repr(r.miou), repr(r.fb_iou),
                             repr(r.chance_miou)])
        if results:
            writer.writerow(["mean",
                             repr(sum(r.miou for r in results) / len(results)),
                             repr(sum(r.fb_iou for r in results) / len(results)),
                             repr(sum(r.chance_miou for r in results) / len(results))])


def format_fold_table(results: Sequence[ZeroShotFoldResult]) -> str:
    """Human-readable table: one column per fold, then mean, then FB-IoU."""
    if not results:
        return "(no folds evaluated)"
    headers = [f"fold {r.fold_index}" for r in results] + ["mean", "FB-IoU"]
    mean = sum(r.miou for r in results) / len(results)
    fb = sum(r.fb_iou for r in results) / len(results)
    values = [f"{r.miou:.4f}" for r in results] + [f"{mean:.4f}", f"{fb:.4f}"]
    width = max(len(h) for h in headers + values) + 2
    line1 = "".join(h.rjust(width) for h in ["mIoU"] + headers)
    line2 = "".join(v.rjust(width) for v in [""] + values)
    return line1 + "\n" + line2


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "depth", "pixacc", "miou"])
        for r in rows:
            writer.writerow([r.kind, r.depth, repr(r.pixacc), repr(r.miou)])


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    """Depth rows against block-kind columns, two metrics per cell."""
    kinds = sorted({r.kind for r in rows})
    depths = sorted({r.depth for r in rows})
    by_key = {(r.kind, r.depth): r for r in rows}
    width = 24
    header = "depth".ljust(8) + "".join(
        f"{k} pixAcc/mIoU".rjust(width) for k in kinds
    )
    lines = [header]
    for d in depths:
        cells = []
        for k in kinds:
            r = by_key.get((k, d))
            cells.append("-" if r is None else f"{r.pixacc:.4f} / {r.miou:.4f}")
        lines.append(str(d).ljust(8) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines)
