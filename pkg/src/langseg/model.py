"""Dense language-driven segmentation model.

The image encoder turns an H x W x 3 image into per-pixel embedding vectors at
1/s resolution. Those embeddings are correlated against a frozen matrix of
label embeddings, giving one score map per label. A stack of channel-shared
spatial blocks cleans the score maps up, and bilinear upsampling brings them
back to input resolution where the per-pixel argmax is taken.

Everything downstream of the correlation acts channelwise (or through a
channel max), so relabeling the vocabulary permutes outputs instead of
changing them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .embeddings import EmbeddingTable, LabelSet, embed_labels
from .tensor import (
    DTYPES,
    DenseMap,
    GradTape,
    NumericError,
    Param,
    ShapeError,
    bilinear_upsample,
    channel_max,
    conv_depthwise,
    conv_depthwise_shared,
    conv_pointwise,
    l2_normalize,
    pointwise_add,
    relu,
    space_to_depth,
)

CHECKPOINT_MAGIC = b"LSEGCKPT1"
CHECKPOINT_VERSION = 1
BLOCK_KINDS = ("depthwise", "bottleneck")


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry of the dense encoder.

    The encoder embeds non-overlapping patch_size x patch_size patches, mixes
    them with mixing_layers depthwise+pointwise residual layers, then
    upsamples by patch_size // downsample so the output grid is the input
    grid at 1/downsample resolution.
    """

    height: int
    width: int
    embed_dim: int
    downsample: int = 2
    mixing_layers: int = 2
    patch_size: int = 4
    normalize_features: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"bad input size {self.height}x{self.width}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.downsample < 1 or self.patch_size < 1:
            raise ValueError("downsample and patch_size must be positive")
        if self.patch_size % self.downsample:
            raise ValueError(
                f"patch_size {self.patch_size} not divisible by downsample {self.downsample}"
            )
        stride = self.downsample * self.patch_size
        if self.height % stride or self.width % stride:
            raise ValueError(
                f"input {self.height}x{self.width} not divisible by "
                f"downsample*patch_size = {stride}"
            )
        if self.mixing_layers < 0:
            raise ValueError("mixing_layers must be >= 0")

    @property
    def grid_height(self) -> int:
        return self.height // self.downsample

    @property
    def grid_width(self) -> int:
        return self.width // self.downsample


@dataclass(frozen=True)
class RegularizerConfig:
    """Stack of depth spatial blocks applied to the score maps.

    block_kind "depthwise" is relu(shared depthwise conv); "bottleneck" first
    adds the per-pixel channel max back onto every channel. Weights are one
    (kernel, kernel) filter plus a scalar bias per block, shared across
    channels, so the stack commutes with channel permutations and accepts any
    number of labels.
    """

    block_kind: str = "bottleneck"
    depth: int = 2
    kernel: int = 3

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")


@dataclass
class ModelParameters:
    """All trainable weights plus the configuration they were built for."""

    encoder: EncoderConfig
    regularizer: RegularizerConfig
    seed: int
    precision: str
    params: dict[str, Param] = field(default_factory=dict)

    def param_list(self) -> list[Param]:
        return list(self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def validate_finite(self) -> None:
        for p in self.params.values():
            if not np.all(np.isfinite(p.values)):
                raise NumericError(f"non-finite values in parameter {p.name!r}")


def init_parameters(encoder: EncoderConfig, regularizer: RegularizerConfig,
                    seed: int, precision: str = "f32") -> ModelParameters:
    """Seeded random init, reproducible from (configs, seed, precision).

    Encoder weights are drawn before regularizer weights, so models that
    differ only in the regularizer share the same encoder init. Depthwise and
    spatial-block kernels start as identity-plus-noise so the stack is close
    to a pass-through at step 0.
    """
    if precision not in DTYPES:
        raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}")
    dtype = DTYPES[precision]
    rng = np.random.default_rng(seed)
    params: dict[str, Param] = {}

    def add(name: str, values: np.ndarray) -> None:
        params[name] = Param(name, np.asarray(values, dtype=dtype))

    c = encoder.embed_dim
    patch_in = 3 * encoder.patch_size ** 2
    add("patch_proj.weight", rng.standard_normal((patch_in, c)) / np.sqrt(patch_in))
    add("patch_proj.bias", np.zeros(c))
    for i in range(encoder.mixing_layers):
        near_id = np.zeros((c, 3, 3))
        near_id[:, 1, 1] = 1.0
        add(f"mix{i}.depthwise.kernel", near_id + 0.05 * rng.standard_normal((c, 3, 3)))
        add(f"mix{i}.depthwise.bias", np.zeros(c))
        add(f"mix{i}.pointwise.weight", rng.standard_normal((c, c)) / np.sqrt(c))
        add(f"mix{i}.pointwise.bias", np.zeros(c))
    # near-zero head: initial scores sit close to 0, so optimization starts
    # from near-uniform label probabilities instead of saturated softmaxes
    add("head.weight", 0.01 * rng.standard_normal((c, c)) / np.sqrt(c))
    add("head.bias", np.zeros(c))

    k = regularizer.kernel
    for j in range(regularizer.depth):
        add(f"reg{j}.kernel", 0.05 * rng.standard_normal((k, k)))
        add(f"reg{j}.bias", np.zeros(()))

    return ModelParameters(encoder, regularizer, seed, precision, params)


# ---------------------------------------------------------------------------
# forward pipeline
# ---------------------------------------------------------------------------


def encode_image(model: ModelParameters, image: np.ndarray,
                 tape: GradTape | None = None) -> DenseMap:
    """Image (H, W, 3) reals in [0, 1] -> per-pixel embeddings (H/s, W/s, C)."""
    enc = model.encoder
    img = np.asarray(image)
    if img.shape != (enc.height, enc.width, 3):
        raise ShapeError(
            f"image shape {img.shape} does not match configured "
            f"{(enc.height, enc.width, 3)}"
        )
    p = model.params
    x = DenseMap(img.astype(DTYPES[model.precision], copy=True))
    x = space_to_depth(x, enc.patch_size, tape)
    x = conv_pointwise(x, p["patch_proj.weight"], p["patch_proj.bias"], tape)
    for i in range(enc.mixing_layers):
        y = conv_depthwise(x, p[f"mix{i}.depthwise.kernel"], p[f"mix{i}.depthwise.bias"], tape)
        y = relu(y, tape)
        y = conv_pointwise(y, p[f"mix{i}.pointwise.weight"], p[f"mix{i}.pointwise.bias"], tape)
        x = pointwise_add(x, y, tape)
    x = conv_pointwise(x, p["head.weight"], p["head.bias"], tape)
    factor = enc.patch_size // enc.downsample
    if factor > 1:
        x = bilinear_upsample(x, factor, tape)
    if enc.normalize_features:
        x = l2_normalize(x, tape)
    return x


def correlate(features: DenseMap, matrix: np.ndarray,
              tape: GradTape | None = None) -> DenseMap:
    """Score map F(i,j,k) = features(i,j) . matrix[k].

    The matrix rows are frozen label embeddings; no gradient is accumulated
    into them, only into the image features.
    """
    t = np.asarray(matrix)
    if t.ndim != 2:
        raise ShapeError(f"label matrix must be 2-D, got shape {t.shape}")
    if t.shape[1] != features.channels:
        raise ShapeError(
            f"label matrix dim {t.shape[1]} != feature channels {features.channels}"
        )
    tv = t.astype(features.values.dtype, copy=False)
    out = DenseMap(features.values @ tv.T)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            features.ensure_grad()
            features.grad += g @ tv
        tape.record(backward)
    return out


def regularize(model: ModelParameters, scores: DenseMap,
               tape: GradTape | None = None) -> DenseMap:
    """Spatial clean-up of the score maps; depth 0 returns scores unchanged.

    Each block is a residual refinement, F + conv(relu(F)); the bottleneck
    variant adds the per-pixel channel max onto every channel before the
    rectification. The skip path keeps gradients flowing even where the
    rectifier is inactive, and with zero conv weights a block is exactly the
    identity, so the stack degrades gracefully to the depth-0 baseline.
    """
    reg = model.regularizer
    x = scores
    for j in range(reg.depth):
        y = x
        if reg.block_kind == "bottleneck":
            pooled = channel_max(y, tape)
            y = pointwise_add(y, pooled, tape)
        y = relu(y, tape)
        y = conv_depthwise_shared(
            y, model.params[f"reg{j}.kernel"], model.params[f"reg{j}.bias"], tape
        )
        x = pointwise_add(x, y, tape)
    return x


def forward_scores(model: ModelParameters, image: np.ndarray, matrix: np.ndarray,
                   tape: GradTape | None = None) -> DenseMap:
    """Full differentiable pipeline to per-pixel, per-label scores at H x W."""
    feats = encode_image(model, image, tape)
    f = correlate(feats, matrix, tape)
    f = regularize(model, f, tape)
    if model.encoder.downsample > 1:
        f = bilinear_upsample(f, model.encoder.downsample, tape)
    return f


@dataclass
class SegmentationOutput:
    label_map: np.ndarray   # (H, W) int32 indices into legend
    scores: np.ndarray      # (H, W, N)
    legend: LabelSet


def predict(model: ModelParameters, image: np.ndarray, labels: LabelSet,
            table: EmbeddingTable) -> SegmentationOutput:
    """Segment one image against an arbitrary label set.

    Ties in the final scores resolve to the lowest label index.
    """
    matrix = embed_labels(table, labels)
    scores = forward_scores(model, image, matrix)
    label_map = np.argmax(scores.values, axis=2).astype(np.int32)
    return SegmentationOutput(label_map=label_map, scores=scores.values, legend=labels)


# ---------------------------------------------------------------------------
# checkpoint file format
# ---------------------------------------------------------------------------
# magic | u32 header length | JSON header | parameter arrays, f32 LE, in
# manifest order. The header records both configs, the init seed, and a
# manifest of (name, shape) so the byte stream is self-describing.


def save_checkpoint(model: ModelParameters, path) -> None:
    model.validate_finite()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "encoder": asdict(model.encoder),
        "regularizer": asdict(model.regularizer),
        "seed": model.seed,
        "precision": "f32",
        "manifest": [[name, list(p.values.shape)] for name, p in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.values, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParameters:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"bad checkpoint magic in {path}")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + hlen > len(data):
        raise CheckpointError(f"truncated checkpoint header in {path}")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header in {path}: {exc}") from exc
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    try:
        encoder = EncoderConfig(**header["encoder"])
        regularizer = RegularizerConfig(**header["regularizer"])
        manifest = header["manifest"]
        seed = int(header["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint header in {path}: {exc}") from exc
    params: dict[str, Param] = {}
    for entry in manifest:
        name, shape = entry[0], tuple(int(d) for d in entry[1])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(data):
            raise CheckpointError(f"truncated parameter data for {name!r} in {path}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        params[name] = Param(name, arr.copy())
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes in {path}")
    model = ModelParameters(encoder, regularizer, seed, "f32", params)
    model.validate_finite()
    return model
