"""Color-wheel zero-shot benchmark.

Twelve shape classes sit at equal steps around the hue circle. A fold holds
out three of them: training scenes contain only the other nine (and only
their names), evaluation scenes contain only the held-out three, segmented
against the full thirteen-name label set. Because the vocabulary is built
from the class colors themselves, names never seen in training remain
reachable through feature geometry alone.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace

import numpy as np

from .data import OTHER_LABEL, SceneSpec, ShapeClass, generate
from .embeddings import (
    EmbeddingTable,
    LabelSet,
    synonym_name,
    vocab_from_features,
)
from .evaluation import (
    AblationRow,
    ConfusionMatrix,
    EmbedDimRow,
    FoldSpec,
    ZeroShotFoldResult,
    ablation_depth,
    ablation_embed_dim,
    miou,
    pixacc,
    zero_shot_fold_eval,
)
from .model import (
    EncoderConfig,
    ModelParameters,
    RegularizerConfig,
    init_parameters,
    predict,
)
from .training import TrainConfig, train

HUE_NAMES = (
    "red", "orange", "yellow", "chartreuse", "green", "spring",
    "cyan", "azure", "blue", "violet", "magenta", "rose",
)
GEOMETRY_CYCLE = ("rect", "disk", "triangle")
BACKGROUND = (0.08, 0.08, 0.1)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything the color-wheel benchmark needs, with desk-scale defaults."""

    image_size: int = 64
    embed_dim: int = 24
    patch_size: int = 4
    downsample: int = 2
    mixing_layers: int = 1
    block_kind: str = "bottleneck"
    depth: int = 2
    fold_count: int = 4
    train_scenes: int = 64
    eval_scenes: int = 200
    shapes_per_image: tuple[int, int] = (1, 3)
    size_range: tuple[float, float] = (0.28, 0.45)
    train_steps: int = 600
    batch_size: int = 2
    base_lr: float = 0.005
    seed: int = 0
    vocab_seed: int = 7
    synonym_noise: float = 0.0

    def __post_init__(self):
        if self.fold_count < 2 or len(HUE_NAMES) % self.fold_count:
            raise ValueError(
                f"fold_count must divide {len(HUE_NAMES)}, got {self.fold_count}")


def class_color(index: int) -> tuple[float, float, float]:
    """Pure hue at position index on a twelve-step wheel."""
    return colorsys.hsv_to_rgb(index / len(HUE_NAMES), 0.85, 0.9)


def benchmark_classes(size_range=(0.28, 0.45)) -> tuple[ShapeClass, ...]:
    return tuple(
        ShapeClass(
            name=name,
            geometry=GEOMETRY_CYCLE[i % len(GEOMETRY_CYCLE)],
            color=class_color(i),
            size_range=size_range,
        )
        for i, name in enumerate(HUE_NAMES)
    )


def color_features() -> dict[str, np.ndarray]:
    """RGB grounding for every benchmark label, including "other"."""
    features = {OTHER_LABEL: np.array(BACKGROUND)}
    for i, name in enumerate(HUE_NAMES):
        features[name] = np.array(class_color(i))
    return features


def benchmark_vocabulary(cfg: BenchmarkConfig) -> EmbeddingTable:
    """Ground every label, including "other", in its canvas color."""
    return vocab_from_features(color_features(), cfg.embed_dim, cfg.vocab_seed,
                               synonym_noise=cfg.synonym_noise)


def fold_spec(cfg: BenchmarkConfig, index: int) -> FoldSpec:
    return FoldSpec(classes=HUE_NAMES, fold_count=cfg.fold_count, index=index)


def _scene_spec(cfg: BenchmarkConfig, classes: tuple[ShapeClass, ...],
                universe: tuple[str, ...], seed: int) -> SceneSpec:
    return SceneSpec(
        height=cfg.image_size,
        width=cfg.image_size,
        classes=classes,
        shapes_per_image=cfg.shapes_per_image,
        seed=seed,
        background=BACKGROUND,
        label_universe=universe,
    )


def _encoder(cfg: BenchmarkConfig) -> EncoderConfig:
    return EncoderConfig(
        height=cfg.image_size, width=cfg.image_size, embed_dim=cfg.embed_dim,
        downsample=cfg.downsample, mixing_layers=cfg.mixing_layers,
        patch_size=cfg.patch_size,
    )


def train_fold_model(cfg: BenchmarkConfig, table: EmbeddingTable,
                     seen: tuple[str, ...]) -> ModelParameters:
    """Train a fresh model on scenes drawn only from the seen classes.

    The label universe of every training sample is exactly the seen names,
    so neither held-out names nor held-out pixels can reach the optimizer.
    """
    by_name = {c.name: c for c in benchmark_classes(cfg.size_range)}
    classes = tuple(by_name[name] for name in seen)
    spec = _scene_spec(cfg, classes, universe=seen, seed=cfg.seed * 97 + 1)
    dataset = generate(spec, cfg.train_scenes)
    model = init_parameters(
        _encoder(cfg),
        RegularizerConfig(block_kind=cfg.block_kind, depth=cfg.depth),
        seed=cfg.seed,
    )
    train_cfg = TrainConfig(base_lr=cfg.base_lr, max_steps=cfg.train_steps,
                            batch_size=cfg.batch_size, seed=cfg.seed)
    model, _ = train(model, table, dataset, train_cfg)
    return model


def evaluate_fold(cfg: BenchmarkConfig, model: ModelParameters,
                  table: EmbeddingTable, held: tuple[str, ...],
                  use_synonyms: bool = False,
                  ) -> tuple[ConfusionMatrix, tuple[str, ...], int]:
    """Segment held-out-class scenes against the full label set.

    With use_synonyms the held-out names are queried through their synonym
    entries instead; scenes and ground truth are unchanged, so any metric
    difference comes purely from the vocabulary.
    """
    by_name = {c.name: c for c in benchmark_classes(cfg.size_range)}
    classes = tuple(by_name[name] for name in held)
    spec = _scene_spec(cfg, classes, universe=HUE_NAMES, seed=cfg.seed * 97 + 2)
    samples = generate(spec, cfg.eval_scenes)
    query = [OTHER_LABEL] + [
        synonym_name(n) if use_synonyms and n in held else n for n in HUE_NAMES
    ]
    labels = LabelSet(tuple(query), other_index=0)
    cm = ConfusionMatrix(len(labels))
    for s in samples:
        out = predict(model, s.image, labels, table)
        cm.add(s.target, out.label_map)
    return cm, (OTHER_LABEL,) + tuple(HUE_NAMES), 0


def run_fold(cfg: BenchmarkConfig, index: int,
             table: EmbeddingTable | None = None,
             use_synonyms: bool = False) -> ZeroShotFoldResult:
    if table is None:
        table = benchmark_vocabulary(cfg)
    fold = fold_spec(cfg, index)

    def train_fn(seen):
        return train_fold_model(cfg, table, seen)

    def eval_fn(model, held):
        return evaluate_fold(cfg, model, table, held, use_synonyms=use_synonyms)

    return zero_shot_fold_eval(fold, train_fn, eval_fn)


def run_benchmark(cfg: BenchmarkConfig) -> list[ZeroShotFoldResult]:
    table = benchmark_vocabulary(cfg)
    return [run_fold(cfg, i, table=table) for i in range(cfg.fold_count)]


# ---------------------------------------------------------------------------
# ablation pipelines
# ---------------------------------------------------------------------------


def _seen_class_run(cfg: BenchmarkConfig) -> tuple[float, float]:
    """Train on all twelve classes, score fresh scenes of the same classes."""
    table = benchmark_vocabulary(cfg)
    model = train_fold_model(cfg, table, HUE_NAMES)
    classes = benchmark_classes(cfg.size_range)
    spec = _scene_spec(cfg, classes, universe=HUE_NAMES, seed=cfg.seed * 97 + 3)
    samples = generate(spec, cfg.eval_scenes)
    labels = LabelSet((OTHER_LABEL,) + HUE_NAMES, other_index=0)
    cm = ConfusionMatrix(len(labels))
    for s in samples:
        out = predict(model, s.image, labels, table)
        cm.add(s.target, out.label_map)
    mean, _ = miou(cm)
    return pixacc(cm), mean


def run_ablation_depth(cfg: BenchmarkConfig) -> list[AblationRow]:
    def run_fn(kind, depth):
        return _seen_class_run(replace(cfg, block_kind=kind, depth=depth))

    return ablation_depth(run_fn)


def run_ablation_embed_dim(cfg: BenchmarkConfig,
                           dims=(16, 64, 128)) -> list[EmbedDimRow]:
    def run_fn(dim):
        return _seen_class_run(replace(cfg, embed_dim=dim))

    return ablation_embed_dim(run_fn, dims=dims)
