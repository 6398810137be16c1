"""Domain types, label codec, dataset manifest, and the MCEB embedding file format.

Everything downstream (chunking, encoders, training, metrics) consumes these
contracts. Types are immutable after construction and safe to share across
threads; file I/O is single-writer per path.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Canonical aspect order; index j in a label vector always refers to this order.
DEFAULT_ASPECT_NAMES = (
    "Transaction",
    "CustomerService",
    "ClaimedBenefit",
    "ServiceTypes",
    "Miscellaneous",
)

NUM_ASPECTS = 5
NUM_STATES = 3  # 0 absent, 1 present & non-complaint, 2 present & complaint

MCEB_MAGIC = b"MCEB"
MCEB_VERSION = 1

VALID_SPLITS = ("train", "test")


class FormatError(ValueError):
    """Raised when a binary or JSON artifact does not match its documented layout.

    ``offset`` is the byte offset at which the problem was detected, when known.
    """

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class AspectCatalog:
    """The ordered, immutable set of aspect identifiers.

    The order is canonical for the lifetime of a dataset: position j of every
    label vector refers to ``names[j]``.
    """

    names: tuple[str, ...] = DEFAULT_ASPECT_NAMES

    def __post_init__(self):
        if len(self.names) != NUM_ASPECTS:
            raise ValueError(f"catalog must have exactly {NUM_ASPECTS} aspects, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("aspect names must be unique")
        object.__setattr__(self, "names", tuple(self.names))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown aspect name: {name!r} (known: {list(self.names)})") from None


@dataclass(frozen=True)
class AspectLabelVector:
    """Length-5 trinary label: 0 absent, 1 present non-complaint, 2 present complaint."""

    states: tuple[int, ...]

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        if len(states) != NUM_ASPECTS:
            raise ValueError(f"label vector must have length {NUM_ASPECTS}, got {len(states)}")
        for j, s in enumerate(states):
            if s not in (0, 1, 2):
                raise ValueError(f"label state at position {j} must be 0, 1 or 2, got {s}")
        object.__setattr__(self, "states", states)

    def to_array(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int64)

    @classmethod
    def from_sequence(cls, seq: Sequence[int]) -> "AspectLabelVector":
        return cls(states=tuple(seq))


def encode_label(
    present_aspects: Sequence[tuple[str, bool]], catalog: AspectCatalog
) -> AspectLabelVector:
    """Build a trinary label vector from (aspect_name, is_complaint) pairs.

    Listed aspects get state 2 (complaint) or 1 (non-complaint); everything
    else stays 0. Unknown or duplicated aspect names are rejected.
    """
    states = [0] * NUM_ASPECTS
    seen: set[str] = set()
    for name, is_complaint in present_aspects:
        if name in seen:
            raise ValueError(f"duplicate aspect name: {name!r}")
        seen.add(name)
        j = catalog.index(name)
        states[j] = 2 if is_complaint else 1
    return AspectLabelVector(states=tuple(states))


def decode_label(
    v: AspectLabelVector, catalog: AspectCatalog
) -> list[tuple[str, bool]]:
    """Inverse of :func:`encode_label`: present aspects in canonical order."""
    out: list[tuple[str, bool]] = []
    for j, s in enumerate(v.states):
        if s != 0:
            out.append((catalog.names[j], s == 2))
    return out


def _as_float_matrix(data: np.ndarray, name: str) -> np.ndarray:
    arr = np.array(data)  # defensive copy; containers own their storage
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (rows x dim), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EmbeddingSequence:
    """A (num_chunks x dim) float sequence with a per-row validity mask."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = _as_float_matrix(self.data, "embedding data")
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 1 or mask.shape[0] != data.shape[0]:
            raise ValueError(
                f"mask length {mask.shape} must equal data row count {data.shape[0]}"
            )
        if not mask.any():
            raise ValueError("embedding sequence must have at least one valid row")
        data.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def num_chunks(self) -> int:
        return int(self.data.shape[0])

    @classmethod
    def full(cls, data: np.ndarray) -> "EmbeddingSequence":
        """Sequence where every row is valid."""
        data = np.asarray(data)
        return cls(data=data, mask=np.ones(data.shape[0], dtype=bool))


# Chunk spans must not exceed the 2-second segmentation interval. A small
# tolerance absorbs float32 round-trip noise in the stored timestamps.
MAX_CHUNK_SPAN_S = 2.0
_SPAN_EPS = 1e-4


@dataclass(frozen=True)
class Chunk:
    """One timestamped segment with one text and one aggregated image embedding."""

    start_s: float
    end_s: float
    text_embedding: np.ndarray
    image_embedding: np.ndarray

    def __post_init__(self):
        text = np.array(self.text_embedding)  # defensive copies
        image = np.array(self.image_embedding)
        if text.ndim != 1 or image.ndim != 1:
            raise ValueError("chunk embeddings must be 1-D vectors")
        if text.shape != image.shape:
            raise ValueError(
                f"text and image embeddings must share one dim, got {text.shape} vs {image.shape}"
            )
        if not (np.all(np.isfinite(text)) and np.all(np.isfinite(image))):
            raise ValueError("chunk embeddings contain non-finite values")
        if not self.end_s > self.start_s:
            raise ValueError(f"chunk span must be positive: [{self.start_s}, {self.end_s})")
        if self.end_s - self.start_s > MAX_CHUNK_SPAN_S + _SPAN_EPS:
            raise ValueError(
                f"chunk span {self.end_s - self.start_s:.6f}s exceeds {MAX_CHUNK_SPAN_S}s"
            )
        text.setflags(write=False)
        image.setflags(write=False)
        object.__setattr__(self, "text_embedding", text)
        object.__setattr__(self, "image_embedding", image)

    @property
    def dim(self) -> int:
        return int(self.text_embedding.shape[0])


@dataclass(frozen=True)
class ChunkedReview:
    """A review decomposed into contiguous 2-second chunks, optionally labeled."""

    review_id: str
    chunks: tuple[Chunk, ...]
    gold_label: Optional[AspectLabelVector] = None

    def __post_init__(self):
        chunks = tuple(self.chunks)
        if not chunks:
            raise ValueError("a review must contain at least one chunk")
        dim = chunks[0].dim
        prev_end = None
        for i, c in enumerate(chunks):
            if c.dim != dim:
                raise ValueError(f"chunk {i} dim {c.dim} differs from chunk 0 dim {dim}")
            if prev_end is not None and abs(c.start_s - prev_end) > _SPAN_EPS:
                raise ValueError(
                    f"chunks must be contiguous: chunk {i} starts at {c.start_s}, "
                    f"previous ended at {prev_end}"
                )
            prev_end = c.end_s
        object.__setattr__(self, "chunks", chunks)

    @property
    def dim(self) -> int:
        return self.chunks[0].dim

    def text_sequence(self) -> EmbeddingSequence:
        return EmbeddingSequence.full(np.stack([c.text_embedding for c in self.chunks]))

    def image_sequence(self) -> EmbeddingSequence:
        return EmbeddingSequence.full(np.stack([c.image_embedding for c in self.chunks]))


# ---------------------------------------------------------------------------
# MCEB binary embedding files
#
# Little-endian layout:
#   magic   4 bytes   b"MCEB"
#   version u32       1
#   dim     u32
#   chunks  u32
#   then per chunk: start_s f32, end_s f32, text f32*dim, image f32*dim
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIII")


def write_embeddings(review: ChunkedReview, path: str | Path) -> None:
    """Persist a review's chunk embeddings in the MCEB binary format.

    Timestamps and embeddings are stored as float32; a read-back reproduces
    them bit-exactly at that precision. The review id and gold label are not
    part of the file; they live in the dataset manifest.
    """
    path = Path(path)
    dim = review.dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MCEB_MAGIC, MCEB_VERSION, dim, len(review.chunks)))
        for c in review.chunks:
            fh.write(struct.pack("<ff", c.start_s, c.end_s))
            fh.write(np.ascontiguousarray(c.text_embedding, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(c.image_embedding, dtype="<f4").tobytes())


def read_embeddings(
    path: str | Path,
    review_id: Optional[str] = None,
    gold_label: Optional[AspectLabelVector] = None,
) -> ChunkedReview:
    """Load an MCEB file back into a :class:`ChunkedReview`.

    The file carries no identity: ``review_id`` defaults to the file stem and
    ``gold_label`` to None; manifest loading supplies both.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)", offset=len(raw))
    magic, version, dim, n_chunks = _HEADER.unpack_from(raw, 0)
    if magic != MCEB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MCEB_MAGIC!r}", offset=0)
    if version != MCEB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if dim == 0 or n_chunks == 0:
        raise FormatError(f"{path}: dim and chunk count must be positive", offset=8)
    chunk_bytes = 8 + 8 * dim
    expected = _HEADER.size + n_chunks * chunk_bytes
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n_chunks} chunks of dim {dim}, got {len(raw)}",
            offset=min(len(raw), expected),
        )
    chunks = []
    off = _HEADER.size
    for _ in range(n_chunks):
        start_s, end_s = struct.unpack_from("<ff", raw, off)
        off += 8
        text = np.frombuffer(raw, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
        image = np.frombuffer(raw, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
        chunks.append(
            Chunk(start_s=start_s, end_s=end_s, text_embedding=text.copy(), image_embedding=image.copy())
        )
    return ChunkedReview(
        review_id=review_id if review_id is not None else path.stem,
        chunks=tuple(chunks),
        gold_label=gold_label,
    )


# ---------------------------------------------------------------------------
# Dataset manifest (JSON)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestSample:
    review_id: str
    path: str  # relative to the manifest file's directory
    gold_label: Optional[AspectLabelVector]
    split: str

    def __post_init__(self):
        if not self.review_id:
            raise ValueError("review_id must not be empty")
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset: catalog, samples, and their train/test assignment."""

    version: int
    aspect_catalog: AspectCatalog
    samples: tuple[ManifestSample, ...]
    root: Path = field(default=Path("."))

    def __post_init__(self):
        ids = [s.review_id for s in self.samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate review ids in manifest: {dupes}")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "root", Path(self.root))

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in VALID_SPLITS}
        for sample in self.samples:
            counts[sample.split] += 1
        return counts

    def split_samples(self, split: str) -> tuple[ManifestSample, ...]:
        if split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {split!r}")
        return tuple(s for s in self.samples if s.split == split)

    def sample_path(self, sample: ManifestSample) -> Path:
        return self.root / sample.path

    def load_review(self, sample: ManifestSample) -> ChunkedReview:
        return read_embeddings(
            self.sample_path(sample),
            review_id=sample.review_id,
            gold_label=sample.gold_label,
        )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    doc = {
        "version": manifest.version,
        "aspects": list(manifest.aspect_catalog.names),
        "samples": [
            {
                "review_id": s.review_id,
                "path": s.path,
                "gold_label": list(s.gold_label.states) if s.gold_label is not None else None,
                "split": s.split,
            }
            for s in manifest.samples
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest; every referenced file must exist.

    Split counts are logged at load so runs record their train/test sizes.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    for key in ("version", "aspects", "samples"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing required key {key!r}")
    catalog = AspectCatalog(names=tuple(doc["aspects"]))
    samples = []
    for i, entry in enumerate(doc["samples"]):
        try:
            gold = entry.get("gold_label")
            sample = ManifestSample(
                review_id=entry["review_id"],
                path=entry["path"],
                gold_label=AspectLabelVector.from_sequence(gold) if gold is not None else None,
                split=entry["split"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: invalid sample entry {i}: {exc}") from exc
        samples.append(sample)
    manifest = DatasetManifest(
        version=int(doc["version"]),
        aspect_catalog=catalog,
        samples=tuple(samples),
        root=path.parent,
    )
    missing = [s.path for s in manifest.samples if not manifest.sample_path(s).exists()]
    if missing:
        raise FormatError(f"{path}: missing embedding files: {missing[:5]}")
    counts = manifest.split_counts()
    logger.info(
        "loaded manifest %s: %d train / %d test samples", path, counts["train"], counts["test"]
    )
    return manifest
