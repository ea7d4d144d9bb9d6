import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darts_forge.autograd.serialize import TensorFormatError, tensor_from_bytes, tensor_to_bytes
from darts_forge.ctc import collapse, required_frames
from darts_forge.data import (ChecksumMismatchError, DatasetError, MalformedHeaderError, SyntheticTaskConfig,
                              TruncatedDataError, Utterance, generate_synthetic_task, label_patterns,
                              make_batches, make_vocab, pad_batch, read_dataset, read_task, write_dataset,
                              write_task)
from darts_forge.nn import downsampled_length

SMALL = dict(n_train=20, n_val=5, n_test=5, seg_min=2, seg_max=4)


def test_noise_free_frames_are_pattern_rows():
    cfg = SyntheticTaskConfig(noise=0.0, **SMALL)
    patterns = label_patterns(cfg)
    assert not patterns[0].any()
    for u in generate_synthetic_task(cfg).train:
        for row in u.features:
            assert np.min(np.abs(patterns - row).max(axis=1)) == 0.0


def test_nearest_prototype_decoder_is_perfect_without_noise():
    cfg = SyntheticTaskConfig(noise=0.0, **SMALL)
    patterns = label_patterns(cfg)
    for u in generate_synthetic_task(cfg).train:
        frames = np.argmin(((u.features[:, None, :] - patterns[None]) ** 2).sum(-1), axis=1)
        assert collapse(frames.tolist()) == u.labels


def test_utterances_are_feasible_after_downsampling():
    cfg = SyntheticTaskConfig(**SMALL)
    for u in generate_synthetic_task(cfg).train:
        assert 1 <= len(u.labels) <= cfg.max_labels
        assert all(1 <= v < cfg.vocab_size for v in u.labels)
        assert downsampled_length(u.frames) >= required_frames(u.labels)


def test_generation_is_deterministic_and_seed_sensitive():
    a = generate_synthetic_task(SyntheticTaskConfig(seed=3, **SMALL))
    b = generate_synthetic_task(SyntheticTaskConfig(seed=3, **SMALL))
    c = generate_synthetic_task(SyntheticTaskConfig(seed=4, **SMALL))
    assert a.train == b.train and a.test == b.test
    assert a.train != c.train


def test_tasks_of_a_family_share_prototypes_but_differ():
    p1 = label_patterns(SyntheticTaskConfig(seed=1, family_seed=9))
    p2 = label_patterns(SyntheticTaskConfig(seed=2, family_seed=9))
    p0 = label_patterns(SyntheticTaskConfig(seed=1, family_seed=9, mixing=0.0))
    assert not np.allclose(p1, p2)
    # without mixing, every task sees the raw family prototypes
    assert np.array_equal(p0, label_patterns(SyntheticTaskConfig(seed=2, family_seed=9, mixing=0.0)))


def test_splits_have_distinct_ids():
    task = generate_synthetic_task(SyntheticTaskConfig(**SMALL))
    ids = [u.id for s in ("train", "val", "test") for u in task.split(s)]
    assert len(ids) == len(set(ids)) == 30
    with pytest.raises(ValueError):
        task.split("dev")


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticTaskConfig(vocab_size=1)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(seg_min=5, seg_max=4)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(noise=-1)
    assert make_vocab(3) == ["<blank>", "a", "b"]


# -- files ---------------------------------------------------------------------------

def test_task_roundtrip(tmp_path):
    task = generate_synthetic_task(SyntheticTaskConfig(task_id="xx", **SMALL))
    write_task(task, tmp_path / "xx")
    back = read_task(tmp_path / "xx")
    assert back.task_id == "xx" and back.vocab == task.vocab and back.config == task.config
    for s in ("train", "val", "test"):
        assert back.split(s) == task.split(s)


def test_empty_dataset_roundtrip(tmp_path):
    write_dataset([], tmp_path / "e", feature_dim=13)
    assert read_dataset(tmp_path / "e") == []
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["feature_dim"] == 13


@pytest.fixture
def small_ds(tmp_path):
    rng = np.random.default_rng(0)
    utts = [Utterance(f"u{i}", rng.normal(size=(5 + i, 3)), [1, 2]) for i in range(3)]
    write_dataset(utts, tmp_path / "d")
    return tmp_path / "d", utts


def test_distinct_errors_for_distinct_corruptions(small_ds):
    root, _ = small_ds
    blob = (root / "u0.dftn").read_bytes()
    (root / "u0.dftn").write_bytes(blob[:-4])
    with pytest.raises(TruncatedDataError):
        read_dataset(root)
    flipped = bytearray(blob)
    flipped[-3] ^= 0x10
    (root / "u0.dftn").write_bytes(bytes(flipped))
    with pytest.raises(ChecksumMismatchError):
        read_dataset(root)
    (root / "u0.dftn").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(MalformedHeaderError):
        read_dataset(root)


def test_manifest_tamper_detected(small_ds):
    root, _ = small_ds
    m = json.loads((root / "manifest.json").read_text())
    m["utterances"][0]["frames"] = 99
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ChecksumMismatchError):
        read_dataset(root)
    (root / "manifest.json").write_text("{not json")
    with pytest.raises(MalformedHeaderError):
        read_dataset(root)


def test_labels_tamper_detected(small_ds):
    root, _ = small_ds
    text = (root / "labels.jsonl").read_text().replace("[1, 2]", "[2, 1]", 1)
    (root / "labels.jsonl").write_text(text)
    with pytest.raises(ChecksumMismatchError):
        read_dataset(root)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 255))
def test_any_single_byte_flip_is_reported(tmp_path_factory, pos, xor):
    root = tmp_path_factory.mktemp("fuzz")
    u = Utterance("a", np.arange(12.0).reshape(4, 3), [1])
    write_dataset([u], root)
    target = root / "a.dftn"
    blob = bytearray(target.read_bytes())
    blob[pos % len(blob)] ^= xor
    target.write_bytes(bytes(blob))
    with pytest.raises(DatasetError):
        read_dataset(root)


def test_tensor_serialization_roundtrip():
    arr = np.random.default_rng(0).normal(size=(3, 4, 2))
    back, end = tensor_from_bytes(tensor_to_bytes(arr))
    assert np.array_equal(back, arr) and end == len(tensor_to_bytes(arr))


# -- batching --------------------------------------------------------------------------

def test_pad_batch_layout():
    utts = [Utterance("a", np.ones((2, 3)), [1]), Utterance("b", np.full((4, 3), 2.0), [2, 1])]
    b = pad_batch(utts)
    assert b.features.shape == (2, 1, 4, 3)
    assert b.lengths.tolist() == [2, 4]
    assert not b.features[0, 0, 2:].any() and (b.features[1, 0] == 2).all()
    assert b.labels == [[1], [2, 1]] and b.ids == ["a", "b"]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 100), st.booleans(), st.booleans())
def test_batches_cover_every_utterance_once(n, bs, seed, by_len, shuffle):
    rng = np.random.default_rng(n)
    utts = [Utterance(f"u{i}", np.zeros((int(rng.integers(1, 9)), 2)), [1]) for i in range(n)]
    batches = make_batches(utts, bs, seed=seed, sort_by_length=by_len, shuffle=shuffle)
    ids = [i for b in batches for i in b.ids]
    assert sorted(ids) == sorted(u.id for u in utts)
    assert all(len(b.ids) <= bs for b in batches)
    assert len(batches) == -(-n // bs)
    again = make_batches(utts, bs, seed=seed, sort_by_length=by_len, shuffle=shuffle)
    assert [b.ids for b in again] == [b.ids for b in batches]
    if not shuffle and not by_len:
        assert ids == [u.id for u in utts]


def test_batching_edge_cases():
    assert make_batches([], 4) == []
    with pytest.raises(ValueError):
        make_batches([Utterance("a", np.zeros((1, 1)), [1])], 0)


def test_noise_free_single_label_segment_is_repeated_prototype():
    cfg = SyntheticTaskConfig(noise=0.0, max_labels=1, seg_min=4, seg_max=4, n_train=5, n_val=0, n_test=0)
    patterns = label_patterns(cfg)
    for u in generate_synthetic_task(cfg).train:
        assert u.features.shape == (4, cfg.feature_dim)
        assert (u.features == patterns[u.labels[0]]).all()


def test_batch_size_one_has_no_padding():
    rng = np.random.default_rng(1)
    utts = [Utterance(f"u{i}", rng.normal(size=(int(rng.integers(1, 9)), 2)), [1]) for i in range(6)]
    for b in make_batches(utts, 1, seed=3):
        assert len(b.ids) == 1 and b.features.shape[2] == b.lengths[0]


def test_huge_declared_shape_is_a_format_error():
    blob = bytearray(tensor_to_bytes(np.zeros((1, 1))))
    blob[8:24] = (2**62).to_bytes(8, "little") * 2
    with pytest.raises(TensorFormatError):
        tensor_from_bytes(bytes(blob))
