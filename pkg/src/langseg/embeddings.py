"""Frozen label embeddings: the stand-in for a pretrained text encoder.

An EmbeddingTable maps label strings to fixed C-dimensional vectors. Tables
come from a binary file, a plain-text authoring file, or one of the two
deterministic synthetic generators (hierarchy-structured or feature-grounded).
The table is never updated by training.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"LEMB1\x00"
SYNONYM_SEP = "~"


class EmbeddingError(ValueError):
    """Base class for embedding table problems."""


class UnknownLabelError(EmbeddingError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"label not in embedding table: {label!r}")


class TableMagicError(EmbeddingError):
    """File does not start with the embedding-table magic."""


class TableDimensionError(EmbeddingError):
    """Vector dimension in the file conflicts with what was expected."""


class TableTruncatedError(EmbeddingError):
    """File ended before all declared entries were read."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered list of label strings, optionally marking a background label."""

    labels: tuple[str, ...]
    other_index: int | None = None

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("label set must contain at least one label")
        if any(not lbl for lbl in self.labels):
            raise ValueError("labels must be non-empty strings")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in {self.labels}")
        if self.other_index is not None and not (0 <= self.other_index < len(self.labels)):
            raise ValueError(f"other_index {self.other_index} out of range")

    @classmethod
    def parse(cls, labels: Iterable[str], other: str | None = None) -> "LabelSet":
        """Build a LabelSet; a literal "other" entry is auto-marked as background
        unless an explicit background label name is given."""
        labels = tuple(str(l).strip() for l in labels)
        if other is not None:
            if other not in labels:
                raise ValueError(f"background label {other!r} not in label list")
            idx = labels.index(other)
        else:
            idx = labels.index("other") if "other" in labels else None
        return cls(labels, idx)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def permuted(self, perm: Sequence[int]) -> "LabelSet":
        labels = tuple(self.labels[p] for p in perm)
        other = list(perm).index(self.other_index) if self.other_index is not None else None
        return LabelSet(labels, other)


class EmbeddingTable:
    """Immutable label -> vector map with a fixed dimension."""

    def __init__(self, dimension: int, entries: Mapping[str, np.ndarray], normalized: bool = False):
        if dimension < 1:
            raise EmbeddingError(f"dimension must be >= 1, got {dimension}")
        if not entries:
            raise EmbeddingError("embedding table requires at least one entry")
        self.dimension = int(dimension)
        self.normalized = bool(normalized)
        store: dict[str, np.ndarray] = {}
        for label, vec in entries.items():
            v = np.asarray(vec, dtype=np.float32)
            if v.shape != (dimension,):
                raise TableDimensionError(
                    f"vector for {label!r} has shape {v.shape}, expected ({dimension},)")
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"vector for {label!r} has non-finite entries")
            v.setflags(write=False)
            store[label] = v
        self._entries = store

    def __contains__(self, label: str) -> bool:
        return label in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def labels(self) -> list[str]:
        return list(self._entries)

    def vector(self, label: str) -> np.ndarray:
        try:
            return self._entries[label]
        except KeyError:
            raise UnknownLabelError(label) from None

    def digest(self) -> str:
        """Stable content hash, used to verify the table is frozen."""
        import hashlib

        h = hashlib.sha256()
        for label in sorted(self._entries):
            h.update(label.encode("utf-8"))
            h.update(b"\x00")
            h.update(self._entries[label].tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        if self.dimension != other.dimension or set(self._entries) != set(other._entries):
            return False
        return all(np.array_equal(self._entries[k], other._entries[k]) for k in self._entries)


def embed_labels(table: EmbeddingTable, labels: LabelSet) -> np.ndarray:
    """Stack the vectors for an ordered label set into an (N, C) matrix.

    Row k is the vector for label k; permuting the labels permutes the rows
    identically and nothing else.
    """
    return np.stack([table.vector(lbl) for lbl in labels.labels], axis=0)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    """Write the canonical binary format (little-endian)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", table.dimension, len(table)))
        for label in table.labels():
            raw = label.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise EmbeddingError(f"label too long: {label[:32]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(table.vector(label).astype("<f4").tobytes())


def _load_binary(data: bytes, expect_dim: int | None) -> EmbeddingTable:
    if len(data) < len(MAGIC) + 8:
        raise TableTruncatedError("file shorter than the fixed header")
    if data[: len(MAGIC)] != MAGIC:
        raise TableMagicError(f"bad magic {data[:len(MAGIC)]!r}")
    dim, count = struct.unpack_from("<II", data, len(MAGIC))
    if expect_dim is not None and dim != expect_dim:
        raise TableDimensionError(f"table dimension {dim}, expected {expect_dim}")
    if dim < 1 or count < 1:
        raise TableDimensionError(f"invalid header: dimension {dim}, {count} entries")
    off = len(MAGIC) + 8
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 2 > len(data):
            raise TableTruncatedError("file ended inside an entry header")
        (lab_len,) = struct.unpack_from("<H", data, off)
        off += 2
        end = off + lab_len + 4 * dim
        if end > len(data):
            raise TableTruncatedError("file ended inside an entry body")
        label = data[off:off + lab_len].decode("utf-8")
        vec = np.frombuffer(data[off + lab_len:end], dtype="<f4").astype(np.float32)
        entries[label] = vec
        off = end
    return EmbeddingTable(dim, entries)


def _load_text(text: str, expect_dim: int | None) -> EmbeddingTable:
    # authoring format: one record per line, label then C decimal floats,
    # whitespace separated (labels with spaces need the binary format)
    entries: dict[str, np.ndarray] = {}
    dim = expect_dim
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise EmbeddingError(f"line {lineno}: expected 'label v1 ... vC'")
        label = parts[0]
        try:
            vec = np.array([float(p) for p in parts[1:]], dtype=np.float32)
        except ValueError as exc:
            raise EmbeddingError(f"line {lineno}: {exc}") from None
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise TableDimensionError(
                f"line {lineno}: {vec.size} components, expected {dim}")
        entries[label] = vec
    if not entries:
        raise EmbeddingError("no records in text table")
    return EmbeddingTable(dim, entries)


def load_table(path: str | Path, expect_dim: int | None = None) -> EmbeddingTable:
    """Load a table, auto-detecting binary (magic) vs plain-text authoring format."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] == MAGIC:
        return _load_binary(data, expect_dim)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise TableMagicError("not a binary table and not valid UTF-8 text") from None
    return _load_text(text, expect_dim)


# ---------------------------------------------------------------------------
# synthetic vocabularies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticVocabulary:
    """Recipe for a deterministic vocabulary with hierarchy and synonyms.

    concepts is a list of (name, parent-or-None). Every concept also gets one
    synonym entry named '<name>~syn' whose vector sits at angular distance
    exactly arctan(synonym_noise) from the base vector (identical at noise 0).
    """

    concepts: tuple[tuple[str, str | None], ...]
    seed: int
    dimension: int
    synonym_noise: float = 0.0
    child_offset: float = 0.6  # tangent of the child-to-parent angle

    def __post_init__(self):
        if self.synonym_noise < 0:
            raise ValueError("synonym_noise must be >= 0")
        if self.dimension < 8:
            raise ValueError("dimension must be >= 8")
        names = [name for name, _ in self.concepts]
        if len(set(names)) != len(names):
            raise ValueError("duplicate concept names")


def synonym_name(concept: str, index: int = 0) -> str:
    return f"{concept}{SYNONYM_SEP}syn" if index == 0 else f"{concept}{SYNONYM_SEP}syn{index}"


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthogonal_unit(rng: np.random.Generator, base: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(base.size)
    v -= base * (v @ base)
    return _unit(v)


def _tilt(rng: np.random.Generator, base: np.ndarray, tangent: float) -> np.ndarray:
    """Unit vector at angle arctan(tangent) from a unit base vector."""
    if tangent == 0:
        return base.copy()
    return _unit(base + tangent * _orthogonal_unit(rng, base))


def synth_vocab(spec: SyntheticVocabulary) -> EmbeddingTable:
    """Deterministically generate an L2-normalized table from a vocabulary spec.

    Roots are independent random directions; children sit at a fixed angle
    from their parent; synonyms at angle arctan(synonym_noise) from their base.
    """
    rng = np.random.default_rng(spec.seed)
    known = {name for name, _ in spec.concepts}
    vectors: dict[str, np.ndarray] = {}
    for name, parent in spec.concepts:
        if parent is None:
            vectors[name] = _unit(rng.standard_normal(spec.dimension))
        else:
            if parent not in known:
                raise EmbeddingError(f"concept {name!r} names unknown parent {parent!r}")
            if parent not in vectors:
                raise EmbeddingError(f"concept {name!r} listed before its parent {parent!r}")
            vectors[name] = _tilt(rng, vectors[parent], spec.child_offset)
    entries: dict[str, np.ndarray] = {}
    for name, _ in spec.concepts:
        entries[name] = vectors[name]
        entries[synonym_name(name)] = _tilt(rng, vectors[name], spec.synonym_noise)
    return EmbeddingTable(spec.dimension, entries, normalized=True)


def vocab_from_features(features: Mapping[str, np.ndarray], dimension: int, seed: int,
                        synonym_noise: float = 0.0) -> EmbeddingTable:
    """Embed concepts through one random linear map of their feature vectors.

    Concepts with nearby features land on nearby directions, which is what
    lets labels never seen in training be resolved by geometry alone. Each
    concept also gets a '<name>~syn' entry, exactly as in synth_vocab.
    """
    if dimension < 8:
        raise EmbeddingError("dimension must be >= 8")
    names = list(features)
    feat = np.stack([np.asarray(features[n], dtype=np.float64) for n in names])
    rng = np.random.default_rng(seed)
    lift = rng.standard_normal((feat.shape[1], dimension)) / np.sqrt(feat.shape[1])
    raw = feat @ lift
    entries: dict[str, np.ndarray] = {}
    for i, name in enumerate(names):
        base = _unit(raw[i])
        entries[name] = base
        entries[synonym_name(name)] = _tilt(rng, base, synonym_noise)
    return EmbeddingTable(dimension, entries, normalized=True)
