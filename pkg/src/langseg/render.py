"""Colors, image I/O, and resolution adaptation shared by the CLI and the
HTTP service.

Label colors are derived from a cryptographic digest of the label name, so
the same name always paints the same color: re-ordering, adding, or removing
labels never changes how an existing label looks.
"""

from __future__ import annotations

import colorsys
import hashlib
import io

import numpy as np
from PIL import Image

from .embeddings import LabelSet


def label_color(name: str) -> tuple[int, int, int]:
    """Stable RGB for a label name (sha256-based, not process-seeded)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    hue = int.from_bytes(digest[:4], "big") / 2**32
    sat = 0.55 + 0.35 * digest[4] / 255
    val = 0.65 + 0.30 * digest[5] / 255
    r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
    return (round(r * 255), round(g * 255), round(b * 255))


def legend_colors(labels: LabelSet) -> list[tuple[int, int, int]]:
    return [label_color(name) for name in labels]


def colorize_map(label_map: np.ndarray, labels: LabelSet) -> np.ndarray:
    """(H, W) indices -> (H, W, 3) uint8 using the stable label palette."""
    label_map = np.asarray(label_map)
    if label_map.min() < 0 or label_map.max() >= len(labels):
        raise ValueError("label map contains indices outside the label set")
    palette = np.array(legend_colors(labels), dtype=np.uint8)
    return palette[label_map]


def decode_image(data: bytes) -> np.ndarray:
    """PNG/JPEG bytes -> (H, W, 3) float64 in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except Exception as exc:
        raise ValueError(f"cannot decode image: {exc}") from exc
    return arr


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def fit_to_model(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize to the model's fixed input resolution."""
    if image.shape[:2] == (height, width):
        return image
    pil = Image.fromarray(np.clip(image * 255.0, 0, 255).astype(np.uint8))
    resized = pil.resize((width, height), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0


def map_to_size(label_map: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize of an index map back to the original size."""
    label_map = np.asarray(label_map)
    if label_map.shape == (height, width):
        return label_map
    pil = Image.fromarray(label_map.astype(np.uint8), mode="L")
    resized = pil.resize((width, height), Image.NEAREST)
    return np.asarray(resized, dtype=label_map.dtype)


def save_png(array: np.ndarray, path) -> None:
    Image.fromarray(array).save(path, format="PNG")


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()
