"""Synthetic text-video pairs and bit-exact embedding file I/O.

Each pair is built from a unit latent concept vector z. Video frames are
redundant, noisy views of z (plus distractor concepts drawn from a shared
pool), while the text keeps only the largest-magnitude fraction of z's
coordinates. The coverage dial makes texts strictly less informative than
their videos, which is the premise the stochastic text mass is meant to
absorb.

Embedding files ("TMEB") hold single-precision row-major matrices with a
fixed 20-byte header; a dataset directory is two such files plus a manifest
CSV mapping pair ids to byte offsets.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContractViolation, FormatError, substream

TEST_FRACTION = 0.2
DISTRACTOR_POOL_FACTOR = 4

EMBEDDING_MAGIC = b"TMEB"
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

# substream purposes for data generation
_STREAM_POOL = 401
_STREAM_PAIR = 402


@dataclass
class SyntheticSpec:
    """Generation knobs: K pairs of c-dimensional concepts, T raw frames,
    text coverage fraction, frame noise scale, distractor concepts per
    frame."""

    pairs: int = 640
    concept_dim: int = 16
    raw_frames: int = 16
    coverage: float = 0.4
    noise_sigma: float = 0.1
    distractors: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.pairs < 2:
            raise ContractViolation("need at least two pairs")
        if self.concept_dim < 2:
            raise ContractViolation("concept dimension must be at least 2")
        if self.raw_frames < 1:
            raise ContractViolation("need at least one raw frame")
        if not 0.0 < self.coverage <= 1.0:
            raise ContractViolation("coverage must lie in (0, 1]")
        if self.noise_sigma < 0.0:
            raise ContractViolation("noise sigma must be nonnegative")
        if self.distractors < 0:
            raise ContractViolation("distractor count must be nonnegative")
        if self.seed < 0:
            raise ContractViolation("seed must be nonnegative")

    @property
    def mask_count(self) -> int:
        count = int(self.coverage * self.concept_dim)
        if count < 1:
            raise ContractViolation("coverage keeps no text coordinates")
        return count


@dataclass
class PairRecord:
    pair_id: int
    text: np.ndarray
    video: np.ndarray
    split: str


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm <= 1e-12:
        raise ContractViolation("cannot normalize a zero vector")
    return v / norm


def generate(spec: SyntheticSpec) -> list[PairRecord]:
    """Deterministic pair list; the last TEST_FRACTION of ids is the test
    split."""
    c = spec.concept_dim
    count = spec.mask_count
    pool = None
    if spec.distractors > 0:
        pool_size = DISTRACTOR_POOL_FACTOR * c
        raw = substream(spec.seed, _STREAM_POOL).standard_normal(pool_size * c)
        pool = raw.reshape(pool_size, c)
        pool = pool / np.linalg.norm(pool, axis=1)[:, None]

    test_start = spec.pairs - int(spec.pairs * TEST_FRACTION)
    records = []
    for pid in range(spec.pairs):
        rng = substream(spec.seed, _STREAM_PAIR, pid)
        z = _unit(rng.standard_normal(c))
        frames = np.empty((spec.raw_frames, c))
        for f in range(spec.raw_frames):
            frame = z.copy()
            if spec.distractors > 0:
                u = rng.uniform(2 * spec.distractors)
                idx = (u[0::2] * pool.shape[0]).astype(np.int64)
                frame = frame + (u[1::2, None] * pool[idx]).sum(axis=0)
            if spec.noise_sigma > 0.0:
                frame = frame + spec.noise_sigma * rng.standard_normal(c)
            frames[f] = _unit(frame)
        keep = np.argsort(-np.abs(z), kind="stable")[:count]
        text = np.zeros(c)
        text[keep] = z[keep]
        text = _unit(text)
        split = "test" if pid >= test_start else "train"
        records.append(PairRecord(pair_id=pid, text=text, video=frames, split=split))
    return records


@dataclass
class CorpusArrays:
    """Stacked per-split views over a record list."""

    train_text: np.ndarray
    train_videos: np.ndarray
    test_text: np.ndarray
    test_videos: np.ndarray
    train_ids: list
    test_ids: list


def split_arrays(records: list[PairRecord]) -> CorpusArrays:
    train = [r for r in records if r.split == "train"]
    test = [r for r in records if r.split == "test"]
    if not train or not test:
        raise ContractViolation("corpus needs both train and test pairs")
    return CorpusArrays(
        train_text=np.stack([r.text for r in train]),
        train_videos=np.stack([r.video for r in train]),
        test_text=np.stack([r.text for r in test]),
        test_videos=np.stack([r.video for r in test]),
        train_ids=[r.pair_id for r in train],
        test_ids=[r.pair_id for r in test],
    )


# ---------------------------------------------------------------------------
# embedding file format


def write_embeddings(path, items: list) -> None:
    """Write homogeneous vectors or per-item row sets as single-precision
    row-major data behind a fixed header."""
    arrays = [np.asarray(item, dtype=np.float64) for item in items]
    if not arrays:
        blob = _HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, 0, 0, 0)
        Path(path).write_bytes(blob)
        return
    shaped = []
    for arr in arrays:
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ContractViolation("embedding items must be vectors or row sets")
        shaped.append(arr)
    rows, dim = shaped[0].shape
    for arr in shaped:
        if arr.shape != (rows, dim):
            raise ContractViolation("embedding items must share one shape")
    parts = [_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, len(shaped), rows, dim)]
    for arr in shaped:
        parts.append(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def item_offset(index: int, rows: int, dim: int) -> int:
    """Byte offset of item `index` inside an embedding file."""
    return _HEADER.size + index * rows * dim * 4


def read_embeddings(path) -> list:
    """Items as float64 arrays; single-row items come back as vectors."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"embedding file truncated at byte {len(blob)} in header")
    magic, version, count, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad embedding magic at byte 0: {magic!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"unsupported embedding version {version} at byte 4")
    expected = _HEADER.size + count * rows * dim * 4
    if len(blob) != expected:
        where = min(len(blob), expected)
        raise FormatError(f"embedding file length mismatch at byte {where}")
    items = []
    for i in range(count):
        start = item_offset(i, rows, dim)
        flat = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=start)
        arr = flat.astype(np.float64).reshape(rows, dim)
        items.append(arr[0] if rows == 1 else arr)
    return items


# ---------------------------------------------------------------------------
# corpus directory: texts.tmeb + videos.tmeb + manifest.csv


def write_corpus(directory, records: list[PairRecord]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not records:
        raise ContractViolation("refusing to write an empty corpus")
    write_embeddings(directory / "texts.tmeb", [r.text for r in records])
    write_embeddings(directory / "videos.tmeb", [r.video for r in records])
    dim = records[0].text.shape[0]
    frames = records[0].video.shape[0]
    with open(directory / "manifest.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pair_id", "split", "text_file_offset", "video_file_offset"])
        for i, record in enumerate(records):
            writer.writerow(
                [
                    record.pair_id,
                    record.split,
                    item_offset(i, 1, dim),
                    item_offset(i, frames, dim),
                ]
            )


def read_corpus(directory) -> list[PairRecord]:
    directory = Path(directory)
    texts = read_embeddings(directory / "texts.tmeb")
    videos = read_embeddings(directory / "videos.tmeb")
    manifest_path = directory / "manifest.csv"
    if not manifest_path.exists():
        raise FormatError(f"missing manifest: {manifest_path}")
    with open(manifest_path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["pair_id", "split", "text_file_offset", "video_file_offset"]:
            raise FormatError("manifest header mismatch")
        rows = list(reader)
    if len(rows) != len(texts) or len(rows) != len(videos):
        raise FormatError(
            f"manifest lists {len(rows)} pairs but files hold {len(texts)} texts "
            f"and {len(videos)} videos"
        )
    records = []
    for i, row in enumerate(rows):
        pair_id, split = int(row[0]), row[1]
        if split not in ("train", "test"):
            raise FormatError(f"manifest row {i}: unknown split {split!r}")
        dim = texts[i].shape[0]
        if int(row[2]) != item_offset(i, 1, dim) or int(row[3]) != item_offset(
            i, videos[i].shape[0], dim
        ):
            raise FormatError(f"manifest row {i}: offset disagrees with file layout")
        records.append(PairRecord(pair_id=pair_id, text=texts[i], video=videos[i], split=split))
    return records
