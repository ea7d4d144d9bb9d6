"""Synthetic multi-task sequence data, dataset files and padded batching.

A synthetic "language" emits, for each label of a random string, a segment
of identical pattern frames plus Gaussian noise.  All tasks of a family
share label prototypes; each task warps them with its own mixing matrix.
Adjacent repeated labels are separated by a silent (all-zero pattern) gap.
"""

from __future__ import annotations

import json
import string
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd.serialize import TensorFormatError, TruncatedPayloadError, tensor_from_bytes, tensor_to_bytes
from .ctc import required_frames
from .nn import downsampled_length

FORMAT_NAME = "darts-forge-dataset"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


class MalformedHeaderError(DatasetError):
    """Manifest or tensor header cannot be parsed."""


class TruncatedDataError(DatasetError):
    """A tensor file ends before its payload does."""


class ChecksumMismatchError(DatasetError):
    """A file's CRC32 differs from the manifest."""


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [T, D]
    labels: list

    @property
    def frames(self) -> int:
        return int(self.features.shape[0])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Utterance) and self.id == other.id and self.labels == other.labels
                and self.features.shape == other.features.shape
                and bool(np.array_equal(self.features, other.features)))


@dataclass(frozen=True)
class SyntheticTaskConfig:
    task_id: str = "task0"
    vocab_size: int = 11
    feature_dim: int = 13
    seg_min: int = 4
    seg_max: int = 10
    max_labels: int = 8
    noise: float = 1.0
    mixing: float = 0.5
    n_train: int = 600
    n_val: int = 100
    n_test: int = 100
    seed: int = 0
    family_seed: int = 0
    downsample: int = 4

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 (blank plus one label)")
        if self.seg_min < 2 or self.seg_max < self.seg_min:
            raise ValueError("need 2 <= seg_min <= seg_max")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.max_labels < 1:
            raise ValueError("max_labels must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def make_vocab(size: int) -> list:
    letters = string.ascii_lowercase + string.ascii_uppercase + string.digits
    if size - 1 > len(letters):
        raise ValueError(f"vocab_size {size} too large")
    return ["<blank>"] + list(letters[:size - 1])


def label_patterns(cfg: SyntheticTaskConfig) -> np.ndarray:
    """Per-label emission patterns ``[V, D]``; row 0 (blank/silence) is zero."""
    V, D = cfg.vocab_size, cfg.feature_dim
    protos = np.random.default_rng([cfg.family_seed, 7919]).normal(size=(V - 1, D))
    warp = np.random.default_rng([cfg.seed, 104729]).normal(size=(D, D)) / np.sqrt(D)
    mix = np.eye(D) + cfg.mixing * warp
    return np.vstack([np.zeros(D), protos @ mix.T])


def _sample_utterance(rng: np.random.Generator, cfg: SyntheticTaskConfig, patterns: np.ndarray,
                      uid: str) -> Utterance:
    while True:
        n = int(rng.integers(1, cfg.max_labels + 1))
        labels = [int(v) for v in rng.integers(1, cfg.vocab_size, size=n)]
        segments = []
        for pos, lab in enumerate(labels):
            if pos and labels[pos - 1] == lab:
                segments.append((0, int(rng.integers(cfg.seg_min, cfg.seg_max + 1))))
            segments.append((lab, int(rng.integers(cfg.seg_min, cfg.seg_max + 1))))
        T = sum(d for _, d in segments)
        t_eff = downsampled_length(T) if cfg.downsample == 4 else -(-T // max(cfg.downsample, 1))
        if t_eff >= required_frames(labels):
            break
    clean = np.concatenate([np.repeat(patterns[lab][None, :], d, axis=0) for lab, d in segments])
    feats = clean + cfg.noise * rng.normal(size=clean.shape)
    return Utterance(uid, feats, labels)


@dataclass
class TaskData:
    task_id: str
    vocab: list
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    config: Optional[SyntheticTaskConfig] = None

    def split(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def generate_synthetic_task(cfg: SyntheticTaskConfig) -> TaskData:
    patterns = label_patterns(cfg)
    rng = np.random.default_rng([cfg.seed, 15485863])
    out = TaskData(cfg.task_id, make_vocab(cfg.vocab_size), config=cfg)
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        utts = out.split(split)
        for i in range(n):
            utts.append(_sample_utterance(rng, cfg, patterns, f"{cfg.task_id}-{split}-{i:05d}"))
    return out


# -- files -------------------------------------------------------------------

def _crc(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _manifest_checksum(manifest: dict) -> int:
    body = {k: v for k, v in manifest.items() if k != "checksum"}
    return _crc(json.dumps(body, sort_keys=True).encode("utf-8"))


def write_dataset(utts: Sequence[Utterance], path, feature_dim: Optional[int] = None,
                  meta: Optional[dict] = None) -> None:
    """Write ``manifest.json`` + one DFTN file per utterance + ``labels.jsonl``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    dims = {u.features.shape[1] for u in utts}
    if len(dims) > 1:
        raise DatasetError(f"inconsistent feature dims {sorted(dims)}")
    D = dims.pop() if dims else feature_dim
    entries = []
    for u in utts:
        blob = tensor_to_bytes(u.features)
        fname = f"{u.id}.dftn"
        (root / fname).write_bytes(blob)
        entries.append({"id": u.id, "frames": u.frames, "file": fname, "crc32": _crc(blob)})
    labels = "".join(json.dumps({"id": u.id, "labels": [int(x) for x in u.labels]}) + "\n" for u in utts)
    labels_blob = labels.encode("utf-8")
    (root / "labels.jsonl").write_bytes(labels_blob)
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "feature_dim": D, "count": len(utts),
                "labels_file": "labels.jsonl", "labels_crc32": _crc(labels_blob), "utterances": entries,
                "meta": meta or {}}
    manifest["checksum"] = _manifest_checksum(manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def read_manifest(path) -> dict:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{root}: unreadable manifest ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        raise MalformedHeaderError(f"{root}: not a {FORMAT_NAME} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise MalformedHeaderError(f"{root}: unsupported version {manifest.get('version')!r}")
    if manifest.get("checksum") != _manifest_checksum(manifest):
        raise ChecksumMismatchError(f"{root}: manifest checksum mismatch")
    return manifest


def read_dataset(path) -> list:
    root = Path(path)
    manifest = read_manifest(root)
    try:
        labels_blob = (root / manifest["labels_file"]).read_bytes()
    except OSError as exc:
        raise MalformedHeaderError(f"{root}: missing labels file ({exc})") from exc
    if _crc(labels_blob) != manifest["labels_crc32"]:
        raise ChecksumMismatchError(f"{root}: labels.jsonl checksum mismatch")
    try:
        labels = {}
        for line in labels_blob.decode("utf-8").splitlines():
            rec = json.loads(line)
            labels[rec["id"]] = [int(x) for x in rec["labels"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedHeaderError(f"{root}: malformed labels.jsonl ({exc})") from exc
    utts = []
    for entry in manifest["utterances"]:
        try:
            blob = (root / entry["file"]).read_bytes()
        except OSError as exc:
            raise MalformedHeaderError(f"{root}: missing tensor file {entry['file']}") from exc
        try:
            arr, end = tensor_from_bytes(blob)
        except TruncatedPayloadError as exc:
            raise TruncatedDataError(f"{entry['file']}: {exc}") from exc
        except TensorFormatError as exc:
            raise MalformedHeaderError(f"{entry['file']}: {exc}") from exc
        if _crc(blob) != entry["crc32"]:
            raise ChecksumMismatchError(f"{entry['file']}: checksum mismatch")
        if end != len(blob) or arr.ndim != 2 or arr.shape != (entry["frames"], manifest["feature_dim"]):
            raise MalformedHeaderError(f"{entry['file']}: unexpected shape {arr.shape}")
        if entry["id"] not in labels:
            raise MalformedHeaderError(f"{root}: no labels for {entry['id']}")
        utts.append(Utterance(entry["id"], arr, labels[entry["id"]]))
    if len(utts) != manifest["count"]:
        raise MalformedHeaderError(f"{root}: manifest count {manifest['count']} != {len(utts)} entries")
    return utts


def write_task(task: TaskData, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    D = task.config.feature_dim if task.config else None
    for split in ("train", "val", "test"):
        write_dataset(task.split(split), root / split, feature_dim=D)
    info = {"task_id": task.task_id, "vocab": task.vocab,
            "config": task.config.to_dict() if task.config else None}
    (root / "task.json").write_text(json.dumps(info, indent=1) + "\n")


def read_task(path) -> TaskData:
    root = Path(path)
    try:
        info = json.loads((root / "task.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{root}: unreadable task.json ({exc})") from exc
    cfg = SyntheticTaskConfig(**info["config"]) if info.get("config") else None
    return TaskData(info["task_id"], info["vocab"], read_dataset(root / "train"),
                    read_dataset(root / "val"), read_dataset(root / "test"), config=cfg)


# -- batching ----------------------------------------------------------------

@dataclass
class Batch:
    features: np.ndarray  # [N, 1, T, D], zero padded
    lengths: np.ndarray
    labels: list
    ids: list


def pad_batch(utts: Sequence[Utterance]) -> Batch:
    T = max(u.frames for u in utts)
    D = utts[0].features.shape[1]
    feats = np.zeros((len(utts), 1, T, D))
    for n, u in enumerate(utts):
        feats[n, 0, :u.frames] = u.features
    return Batch(feats, np.array([u.frames for u in utts], dtype=np.int64),
                 [list(u.labels) for u in utts], [u.id for u in utts])


def make_batches(utts: Sequence[Utterance], batch_size: int, seed=0, sort_by_length: bool = False,
                 shuffle: bool = True) -> list:
    """Split into padded batches; order is a pure function of ``seed``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not utts:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(utts)) if shuffle else np.arange(len(utts))
    if sort_by_length:
        order = order[np.argsort([utts[i].frames for i in order], kind="stable")]
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if sort_by_length and shuffle:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [pad_batch([utts[i] for i in c]) for c in chunks]

