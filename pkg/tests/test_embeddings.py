"""Label sets, embedding tables, file round-trips, synthetic vocabularies."""

import numpy as np
import pytest

from langseg.embeddings import (
    EmbeddingError,
    EmbeddingTable,
    LabelSet,
    SyntheticVocabulary,
    TableDimensionError,
    TableMagicError,
    TableTruncatedError,
    UnknownLabelError,
    embed_labels,
    load_table,
    save_table,
    synonym_name,
    synth_vocab,
    vocab_from_features,
)


def small_table(dim=8):
    rng = np.random.default_rng(0)
    return EmbeddingTable(dim, {name: rng.standard_normal(dim) for name in ("a", "b", "c")})


# ---------------------------------------------------------------------------
# LabelSet
# ---------------------------------------------------------------------------


def test_labelset_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        LabelSet(("a", "a"))
    with pytest.raises(ValueError):
        LabelSet(())
    with pytest.raises(ValueError):
        LabelSet(("a", ""))
    with pytest.raises(ValueError):
        LabelSet(("a",), other_index=1)


def test_labelset_parse_automarks_other():
    ls = LabelSet.parse(["sky", "other", "road"])
    assert ls.other_index == 1
    ls2 = LabelSet.parse(["sky", "bg"], other="bg")
    assert ls2.other_index == 1
    assert LabelSet.parse(["sky"]).other_index is None


def test_labelset_permuted_tracks_other():
    ls = LabelSet.parse(["other", "a", "b"])
    perm = [2, 0, 1]
    p = ls.permuted(perm)
    assert p.labels == ("b", "other", "a")
    assert p.other_index == 1


# ---------------------------------------------------------------------------
# embed_labels
# ---------------------------------------------------------------------------


def test_embed_labels_order_follows_input():
    t = small_table()
    ab = embed_labels(t, LabelSet(("a", "b")))
    ba = embed_labels(t, LabelSet(("b", "a")))
    np.testing.assert_array_equal(ab, ba[::-1])


def test_embed_labels_single():
    t = small_table()
    m = embed_labels(t, LabelSet(("b",)))
    assert m.shape == (1, 8)
    np.testing.assert_array_equal(m[0], t.vector("b"))


def test_embed_labels_unknown_label_named_in_error():
    t = small_table()
    with pytest.raises(UnknownLabelError, match="zebra"):
        embed_labels(t, LabelSet(("a", "zebra")))


def test_embed_permutation_property():
    t = small_table()
    labels = LabelSet(("a", "b", "c"))
    rng = np.random.default_rng(3)
    for _ in range(10):
        perm = list(rng.permutation(3))
        m = embed_labels(t, labels)
        mp = embed_labels(t, labels.permuted(perm))
        np.testing.assert_array_equal(mp, m[perm])


# ---------------------------------------------------------------------------
# file round-trips
# ---------------------------------------------------------------------------


def test_binary_roundtrip_bit_exact(tmp_path):
    spec = SyntheticVocabulary(
        concepts=(("animal", None), ("cat", "animal"), ("car", None)),
        seed=7, dimension=16, synonym_noise=0.05,
    )
    table = synth_vocab(spec)
    path = tmp_path / "vocab.lemb"
    save_table(table, path)
    loaded = load_table(path)
    assert loaded == table
    labels = LabelSet(("cat", "car"))
    np.testing.assert_array_equal(embed_labels(loaded, labels), embed_labels(table, labels))


def test_load_dimension_512(tmp_path):
    rng = np.random.default_rng(1)
    table = EmbeddingTable(512, {"x": rng.standard_normal(512)})
    path = tmp_path / "t.lemb"
    save_table(table, path)
    assert load_table(path).dimension == 512


def test_corrupt_magic_is_distinct_error(tmp_path):
    t = small_table()
    path = tmp_path / "t.lemb"
    save_table(t, path)
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(TableMagicError):
        load_table(path)


def test_truncated_file_is_distinct_error(tmp_path):
    t = small_table()
    path = tmp_path / "t.lemb"
    save_table(t, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 5])
    with pytest.raises(TableTruncatedError):
        load_table(path)


def test_dimension_mismatch_is_distinct_error(tmp_path):
    t = small_table(dim=8)
    path = tmp_path / "t.lemb"
    save_table(t, path)
    with pytest.raises(TableDimensionError):
        load_table(path, expect_dim=16)


def test_empty_table_rejected():
    with pytest.raises(EmbeddingError):
        EmbeddingTable(8, {})


def test_text_format_accepted(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("# authoring format\ncat 1 0 0 0 0 0 0 0\ndog 0 1 0 0 0 0 0 0\n")
    t = load_table(path)
    assert t.dimension == 8
    np.testing.assert_array_equal(t.vector("cat"), np.eye(8, dtype=np.float32)[0])
    with pytest.raises(TableDimensionError):
        load_table(path, expect_dim=4)


# ---------------------------------------------------------------------------
# synthetic vocabulary
# ---------------------------------------------------------------------------


def test_synth_vocab_deterministic():
    spec = SyntheticVocabulary(concepts=(("a", None), ("b", "a")), seed=11, dimension=32)
    assert synth_vocab(spec) == synth_vocab(spec)


def test_synth_vocab_zero_noise_synonym_identical():
    spec = SyntheticVocabulary(concepts=(("a", None),), seed=2, dimension=16, synonym_noise=0.0)
    t = synth_vocab(spec)
    np.testing.assert_array_equal(t.vector("a"), t.vector(synonym_name("a")))


def test_synth_vocab_duplicate_names_rejected():
    with pytest.raises(ValueError):
        SyntheticVocabulary(concepts=(("a", None), ("a", None)), seed=0, dimension=16)


def test_synth_vocab_vectors_unit_norm():
    spec = SyntheticVocabulary(
        concepts=(("p", None), ("c1", "p"), ("c2", "p")), seed=3, dimension=64,
        synonym_noise=0.1,
    )
    t = synth_vocab(spec)
    for label in t.labels():
        assert np.linalg.norm(t.vector(label)) == pytest.approx(1.0, abs=1e-5)


def test_synonym_within_angular_bound():
    sigma = 0.08
    max_angle = np.arctan(sigma) + 1e-6
    for seed in range(20):
        spec = SyntheticVocabulary(
            concepts=(("a", None), ("b", None)), seed=seed, dimension=32, synonym_noise=sigma
        )
        t = synth_vocab(spec)
        for name in ("a", "b"):
            cos = float(np.clip(t.vector(name) @ t.vector(synonym_name(name)), -1, 1))
            assert np.arccos(cos) <= max_angle


def test_child_parent_cosine_above_unrelated():
    spec = SyntheticVocabulary(
        concepts=(("p", None), ("q", None), ("c", "p")), seed=5, dimension=64
    )
    t = synth_vocab(spec)
    related = float(t.vector("c") @ t.vector("p"))
    unrelated = float(t.vector("p") @ t.vector("q"))
    assert related > unrelated + 0.3


def test_synonym_cosine_monte_carlo():
    # mean cos(synonym, base) must beat mean cos(unrelated pair) + 0.3
    # for sigma <= 0.1 at C=64, across 1000 seeds
    syn_cos = []
    unrel_cos = []
    for seed in range(1000):
        spec = SyntheticVocabulary(
            concepts=(("a", None), ("b", None)), seed=seed, dimension=64, synonym_noise=0.1
        )
        t = synth_vocab(spec)
        syn_cos.append(float(t.vector("a") @ t.vector(synonym_name("a"))))
        unrel_cos.append(float(t.vector("a") @ t.vector("b")))
    assert np.mean(syn_cos) > np.mean(unrel_cos) + 0.3


def test_vocab_from_features_nearby_features_nearby_vectors():
    feats = {
        "red": np.array([1.0, 0.0, 0.0]),
        "reddish": np.array([0.95, 0.05, 0.0]),
        "blue": np.array([0.0, 0.0, 1.0]),
    }
    t = vocab_from_features(feats, dimension=32, seed=0)
    close = float(t.vector("red") @ t.vector("reddish"))
    far = float(t.vector("red") @ t.vector("blue"))
    assert close > far + 0.2
    assert np.linalg.norm(t.vector("red")) == pytest.approx(1.0, abs=1e-5)


def test_vocab_from_features_synonyms_at_zero_noise():
    feats = {"x": np.array([0.2, 0.4, 0.6])}
    t = vocab_from_features(feats, dimension=16, seed=1, synonym_noise=0.0)
    np.testing.assert_array_equal(t.vector("x"), t.vector(synonym_name("x")))
