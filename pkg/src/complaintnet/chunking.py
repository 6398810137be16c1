"""Timeline segmentation, frame aggregation, and batch padding.

Sampling rule: frame instants are t = k/fps for k = 0, 1, 2, ... with
t < duration. A 2-second chunk at 3 fps therefore holds exactly 6 frames;
the final partial chunk keeps whatever instants fall inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data_model import AspectLabelVector, ChunkedReview

DEFAULT_FPS = 3.0
DEFAULT_CHUNK_LEN_S = 2.0

# Guard against float noise at chunk boundaries (e.g. k/fps == i*chunk_len).
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class TimelineSpec:
    """Sampling constants for one video timeline."""

    duration_s: float
    fps: float = DEFAULT_FPS
    chunk_len_s: float = DEFAULT_CHUNK_LEN_S

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not self.chunk_len_s > 0:
            raise ValueError(f"chunk_len_s must be positive, got {self.chunk_len_s}")


def _count_below(limit: float) -> int:
    """Number of integers k >= 0 with k < limit (limit > 0), float-noise tolerant."""
    return int(math.ceil(limit - _BOUNDARY_EPS))


def sample_instants(spec: TimelineSpec) -> np.ndarray:
    """All frame sampling times t = k/fps with t < duration, in order."""
    total = _count_below(spec.duration_s * spec.fps)
    return np.arange(total, dtype=np.float64) / spec.fps


def segment_timeline(spec: TimelineSpec) -> list[tuple[float, float, int]]:
    """Split [0, duration) into chunk_len_s chunks and count frames per chunk.

    Returns (start_s, end_s, frame_count) triples. Chunks tile [0, duration)
    exactly once; the last chunk may be shorter. Frame counts over all chunks
    sum to the number of sampling instants in [0, duration).
    """
    n_chunks = _count_below(spec.duration_s / spec.chunk_len_s)
    instants = sample_instants(spec)
    indices = np.floor(instants / spec.chunk_len_s + _BOUNDARY_EPS).astype(np.int64)
    indices = np.minimum(indices, n_chunks - 1)
    counts = np.bincount(indices, minlength=n_chunks)
    out = []
    for i in range(n_chunks):
        start = i * spec.chunk_len_s
        end = min((i + 1) * spec.chunk_len_s, spec.duration_s)
        out.append((start, end, int(counts[i])))
    return out


def aggregate_frame_embeddings(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Reduce a chunk's frame embeddings to one vector by element-wise mean."""
    if len(frames) == 0:
        raise ValueError("cannot aggregate an empty list of frame embeddings")
    arrs = [np.asarray(f) for f in frames]
    dim = arrs[0].shape
    for i, a in enumerate(arrs):
        if a.ndim != 1:
            raise ValueError(f"frame {i} must be a 1-D vector, got shape {a.shape}")
        if a.shape != dim:
            raise ValueError(f"frame {i} dim {a.shape} differs from frame 0 dim {dim}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"frame {i} contains non-finite values")
    return np.mean(np.stack(arrs), axis=0)


@dataclass(frozen=True)
class PaddedBatch:
    """Batched (b x max_cs x dim) modality arrays with a shared validity mask.

    Padding lives only at the tail of each sample (true-prefix mask) and
    padded rows are exactly zero; downstream attention must ignore them.
    """

    text: np.ndarray
    image: np.ndarray
    mask: np.ndarray
    labels: Optional[tuple[AspectLabelVector, ...]] = None

    def __post_init__(self):
        text = np.asarray(self.text)
        image = np.asarray(self.image)
        mask = np.asarray(self.mask, dtype=bool)
        if text.ndim != 3 or image.shape != text.shape:
            raise ValueError(
                f"text and image must share a (batch, max_cs, dim) shape, got {text.shape} vs {image.shape}"
            )
        if mask.shape != text.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} must be {text.shape[:2]}")
        if text.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        for b in range(mask.shape[0]):
            row = mask[b]
            n_valid = int(row.sum())
            if n_valid < 1:
                raise ValueError(f"sample {b} has no valid chunks")
            if not row[:n_valid].all():
                raise ValueError(f"sample {b} mask is not a true-prefix")
            if n_valid < row.shape[0]:
                if np.any(text[b, n_valid:]) or np.any(image[b, n_valid:]):
                    raise ValueError(f"sample {b} has non-zero padded rows")
        if self.labels is not None and len(self.labels) != text.shape[0]:
            raise ValueError("labels length must match batch size")
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)

    @property
    def size(self) -> int:
        return int(self.text.shape[0])

    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def pad_batch(reviews: Sequence[ChunkedReview]) -> PaddedBatch:
    """Stack reviews into a zero-padded batch, preserving row order.

    max_cs is the longest chunk count; shorter samples are zero-padded with a
    false mask at the tail. Valid rows are copied bit-for-bit.
    """
    if len(reviews) == 0:
        raise ValueError("cannot pad an empty batch")
    dim = reviews[0].dim
    for i, r in enumerate(reviews):
        if r.dim != dim:
            raise ValueError(f"review {i} ({r.review_id}) dim {r.dim} differs from dim {dim}")
    max_cs = max(len(r.chunks) for r in reviews)
    b = len(reviews)
    dtype = reviews[0].chunks[0].text_embedding.dtype
    text = np.zeros((b, max_cs, dim), dtype=dtype)
    image = np.zeros((b, max_cs, dim), dtype=dtype)
    mask = np.zeros((b, max_cs), dtype=bool)
    for i, r in enumerate(reviews):
        n = len(r.chunks)
        text[i, :n] = np.stack([c.text_embedding for c in r.chunks])
        image[i, :n] = np.stack([c.image_embedding for c in r.chunks])
        mask[i, :n] = True
    labels = None
    if all(r.gold_label is not None for r in reviews):
        labels = tuple(r.gold_label for r in reviews)
    return PaddedBatch(text=text, image=image, mask=mask, labels=labels)
