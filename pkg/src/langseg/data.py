"""Synthetic scene generator and on-disk dataset format.

Scenes are flat-colored shapes (rectangles, disks, triangles, optionally
textured) painted back-to-front onto a background, so the ground-truth label
of every pixel is exact by construction. Background pixels take the reserved
label "other" at index 0.

On disk a dataset is a directory of 8-bit PNGs plus a manifest: the first
line is the comma-separated label list (order = index), each following line
an "image_path target_path" pair.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .embeddings import LabelSet
from .training import TrainSample

IGNORE_INDEX = 255
GEOMETRIES = ("rect", "disk", "triangle")
TEXTURES = ("flat", "checker", "stripes")
OTHER_LABEL = "other"


class DatasetError(ValueError):
    """Malformed dataset directory, manifest, or target file."""


@dataclass(frozen=True)
class ShapeClass:
    """One drawable concept: geometry plus appearance."""

    name: str
    geometry: str
    color: tuple[float, float, float]
    texture: str = "flat"
    texture_color: tuple[float, float, float] | None = None
    size_range: tuple[float, float] = (0.25, 0.45)   # fraction of min canvas side

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        lo, hi = self.size_range
        if not 0 < lo <= hi <= 1.0:
            raise ValueError(f"size_range must satisfy 0 < lo <= hi <= 1, got {self.size_range}")
        if self.name == OTHER_LABEL:
            raise ValueError(f"{OTHER_LABEL!r} is reserved for the background")


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a family of synthetic scenes.

    label_universe optionally widens the emitted label set beyond the
    drawable classes (the extra names never appear in targets); by default
    the universe is exactly the drawable classes. Index 0 is always "other".
    """

    height: int
    width: int
    classes: tuple[ShapeClass, ...]
    shapes_per_image: tuple[int, int]
    seed: int
    background: tuple[float, float, float] = (0.08, 0.08, 0.1)
    label_universe: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError(f"canvas {self.height}x{self.width} too small")
        if not self.classes:
            raise ValueError("at least one shape class required")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate shape class names")
        lo, hi = self.shapes_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"bad shapes_per_image range {self.shapes_per_image}")
        if self.label_universe is not None:
            missing = set(names) - set(self.label_universe)
            if missing:
                raise ValueError(
                    f"label_universe is missing drawable classes: {sorted(missing)}"
                )
            if len(set(self.label_universe)) != len(self.label_universe):
                raise ValueError("duplicate names in label_universe")

    def label_set(self) -> LabelSet:
        universe = self.label_universe
        if universe is None:
            universe = tuple(c.name for c in self.classes)
        return LabelSet((OTHER_LABEL,) + tuple(universe), other_index=0)


def _shape_mask(geometry: str, size: int, cy: int, cx: int,
                yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    half = size / 2.0
    if geometry == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= half * half
    y0, x0 = cy - half, cx - half
    if geometry == "rect":
        return (yy >= y0) & (yy < y0 + size) & (xx >= x0) & (xx < x0 + size)
    # isoceles triangle: apex top-center, base along the bottom of the box
    ay, ax = y0, x0 + half
    by, bx = y0 + size, x0
    cy2, cx2 = y0 + size, x0 + size

    def side(py, px, qy, qx):
        return (xx - px) * (qy - py) - (yy - py) * (qx - px)

    d1 = side(ay, ax, by, bx)
    d2 = side(by, bx, cy2, cx2)
    d3 = side(cy2, cx2, ay, ax)
    neg = (d1 <= 0) & (d2 <= 0) & (d3 <= 0)
    pos = (d1 >= 0) & (d2 >= 0) & (d3 >= 0)
    return neg | pos


def _texture_pattern(texture: str, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    if texture == "checker":
        return ((yy // 4) + (xx // 4)) % 2 == 0
    if texture == "stripes":
        return (xx // 3) % 2 == 0
    return np.ones_like(yy, dtype=bool)


def _quantize(color: tuple[float, float, float]) -> np.ndarray:
    c = np.clip(np.asarray(color, dtype=np.float64), 0.0, 1.0)
    return np.round(c * 255.0).astype(np.uint8)


def generate(spec: SceneSpec, count: int) -> list[TrainSample]:
    """Render count scenes; deterministic in (spec.seed, image index).

    When every image holds at least one shape, the first shape of image i is
    class i mod K, so each drawable class appears after K images regardless
    of seed. Images are quantized to the 8-bit grid at render time, making
    PNG round-trips bit-exact.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    labels = spec.label_set()
    h, w = spec.height, spec.width
    yy, xx = np.indices((h, w))
    k = len(spec.classes)
    lo, hi = spec.shapes_per_image
    samples = []
    for i in range(count):
        rng = np.random.default_rng((spec.seed, i))
        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:] = _quantize(spec.background)
        target = np.zeros((h, w), dtype=np.uint8)
        n_shapes = int(rng.integers(lo, hi + 1))
        for s in range(n_shapes):
            cls_idx = (i % k) if s == 0 else int(rng.integers(0, k))
            cls = spec.classes[cls_idx]
            frac = float(rng.uniform(*cls.size_range))
            size = max(2, int(round(frac * min(h, w))))
            if size > min(h, w):
                raise ValueError(f"shape of size {size} larger than canvas {h}x{w}")
            # keep the whole shape strictly inside the canvas so nothing clips
            margin = (size + 1) // 2
            if h - margin <= margin or w - margin <= margin:
                raise ValueError(f"shape of size {size} cannot be placed on {h}x{w}")
            cy = int(rng.integers(margin, h - margin))
            cx = int(rng.integers(margin, w - margin))
            mask = _shape_mask(cls.geometry, size, cy, cx, yy, xx)
            pattern = _texture_pattern(cls.texture, yy, xx)
            second = cls.texture_color
            if second is None:
                second = tuple(v * 0.55 for v in cls.color)
            img[mask & pattern] = _quantize(cls.color)
            img[mask & ~pattern] = _quantize(second)
            target[mask] = labels.index(cls.name)
        samples.append(TrainSample(
            image=img.astype(np.float32) / 255.0,
            target=target.astype(np.int64),
            label_set=labels,
        ))
    return samples


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def save_dataset(samples, root) -> None:
    """Write PNGs plus manifest.txt under root (created if needed)."""
    if not samples:
        raise DatasetError("refusing to save an empty dataset")
    labels = samples[0].label_set
    for s in samples:
        if s.label_set != labels:
            raise DatasetError("all samples in a dataset must share one label set")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    lines = [",".join(labels.labels)]
    for idx, s in enumerate(samples):
        img_rel = f"images/{idx:05d}.png"
        tgt_rel = f"targets/{idx:05d}.png"
        img_u8 = np.round(np.clip(s.image, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(img_u8, mode="RGB").save(root / img_rel)
        Image.fromarray(s.target.astype(np.uint8), mode="L").save(root / tgt_rel)
        lines.append(f"{img_rel} {tgt_rel}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(root, expected: LabelSet | None = None,
                 strict: bool = False) -> list[TrainSample]:
    """Read a dataset directory back into TrainSamples.

    With expected set, a manifest whose labels are a permutation of
    expected's is remapped onto expected's indexing (strict=True errors
    instead). A manifest with different label names always errors.
    """
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DatasetError(f"missing manifest: {manifest}")
    lines = [ln for ln in manifest.read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if not lines:
        raise DatasetError(f"empty manifest: {manifest}")
    names = tuple(part.strip() for part in lines[0].split(","))
    file_labels = LabelSet.parse(names)

    remap = None
    labels = file_labels
    if expected is not None and file_labels != expected:
        if strict:
            raise DatasetError(
                f"{manifest}: label set {file_labels.labels} does not match "
                f"expected {expected.labels}"
            )
        if sorted(file_labels.labels) != sorted(expected.labels):
            raise DatasetError(
                f"{manifest}: labels {file_labels.labels} are not a "
                f"permutation of expected {expected.labels}"
            )
        remap = np.full(256, IGNORE_INDEX, dtype=np.int64)
        for j, name in enumerate(file_labels.labels):
            remap[j] = expected.index(name)
        labels = expected

    n = len(labels.labels)
    samples = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"{manifest}: bad sample line {line!r}")
        img_path, tgt_path = root / parts[0], root / parts[1]
        try:
            img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.uint8)
            tgt = np.asarray(Image.open(tgt_path), dtype=np.uint8)
        except (FileNotFoundError, OSError) as exc:
            raise DatasetError(f"unreadable sample file: {exc}") from exc
        if tgt.ndim != 2:
            raise DatasetError(f"{tgt_path}: target must be single channel")
        if img.shape[:2] != tgt.shape:
            raise DatasetError(
                f"{img_path}: image {img.shape[:2]} and target {tgt.shape} differ"
            )
        bad = (tgt >= n) & (tgt != IGNORE_INDEX)
        if bad.any():
            raise DatasetError(
                f"{tgt_path}: target index {int(tgt[bad][0])} out of range "
                f"(labels: {n}, ignore: {IGNORE_INDEX})"
            )
        target = tgt.astype(np.int64)
        if remap is not None:
            target = remap[target]  # remap[IGNORE_INDEX] is IGNORE_INDEX
        samples.append(TrainSample(
            image=img.astype(np.float32) / 255.0,
            target=target,
            label_set=labels,
        ))
    if not samples:
        raise DatasetError(f"{manifest}: no samples listed")
    return samples
