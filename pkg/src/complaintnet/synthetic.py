"""Seeded generator of desk-scale datasets with known, learnable structure.

Each (aspect, state) pair owns one of 15 orthonormal signal directions.
A sample's chunk embeddings are isotropic Gaussian noise plus, for every
aspect, the direction of its gold state scaled by signal_strength and split
across the two modalities. Labels are therefore recoverable in proportion
to the signal carried by whichever modalities a model consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .chunking import TimelineSpec, segment_timeline
from .data_model import (
    NUM_ASPECTS,
    NUM_STATES,
    AspectCatalog,
    AspectLabelVector,
    Chunk,
    ChunkedReview,
    DatasetManifest,
    ManifestSample,
    load_manifest,
    save_manifest,
    write_embeddings,
)

_NUM_DIRECTIONS = NUM_ASPECTS * NUM_STATES  # one direction per (aspect, state)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic dataset.

    modality_split is the fraction of label signal carried by text (1.0 means
    image embeddings carry none). signal_strength 0 produces pure noise no
    model can beat chance on. state_weights optionally skews the per-aspect
    state marginals away from uniform for imbalance stress tests.
    """

    num_samples: int
    dim: int
    max_chunks: int
    seed: int
    signal_strength: float = 3.0
    modality_split: float = 0.5
    train_fraction: float = 0.8
    state_weights: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if self.num_samples < 2:
            raise ValueError("num_samples must be >= 2")
        if self.dim < 4:
            raise ValueError("dim must be >= 4")
        if self.max_chunks < 1:
            raise ValueError("max_chunks must be >= 1")
        if not 0.0 <= self.modality_split <= 1.0:
            raise ValueError("modality_split must be in [0, 1]")
        if self.signal_strength < 0.0:
            raise ValueError("signal_strength must be >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.state_weights is not None:
            w = np.asarray(self.state_weights, dtype=np.float64)
            if w.shape != (NUM_STATES,) or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("state_weights must be 3 non-negative values with positive sum")


def signal_directions(dim: int, seed: int) -> np.ndarray:
    """15 orthonormal unit vectors (one per aspect-state), from a seeded projection.

    Orthonormalization guarantees the class signals are non-interfering,
    which needs dim >= 15.
    """
    if dim < _NUM_DIRECTIONS:
        raise ValueError(
            f"dim {dim} cannot host {_NUM_DIRECTIONS} orthogonal signal directions "
            f"({NUM_STATES} per aspect); need dim >= {_NUM_DIRECTIONS}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    q, _ = np.linalg.qr(rng.normal(size=(dim, _NUM_DIRECTIONS)))
    return q.T.reshape(NUM_ASPECTS, NUM_STATES, dim)


def _sample_review(
    index: int,
    spec: SynthSpec,
    directions: np.ndarray,
    rng: np.random.Generator,
) -> ChunkedReview:
    if spec.state_weights is None:
        states = rng.integers(0, NUM_STATES, size=NUM_ASPECTS)
    else:
        w = np.asarray(spec.state_weights, dtype=np.float64)
        states = rng.choice(NUM_STATES, size=NUM_ASPECTS, p=w / w.sum())
    label = AspectLabelVector.from_sequence(states)

    n_chunks = int(rng.integers(1, spec.max_chunks + 1))
    # Last chunk is sometimes partial so downstream code sees ragged timelines.
    duration = 2.0 * (n_chunks - 1) + float(rng.uniform(0.5, 2.0))
    timeline = segment_timeline(TimelineSpec(duration_s=duration))

    text_coeff = spec.modality_split * spec.signal_strength
    image_coeff = (1.0 - spec.modality_split) * spec.signal_strength
    signal = np.zeros(spec.dim)
    for j in range(NUM_ASPECTS):
        signal = signal + directions[j, states[j]]
    chunks = []
    for start, end, _ in timeline:
        text = rng.normal(size=spec.dim) + text_coeff * signal
        image = rng.normal(size=spec.dim) + image_coeff * signal
        chunks.append(
            Chunk(
                start_s=start,
                end_s=end,
                text_embedding=text.astype(np.float32),
                image_embedding=image.astype(np.float32),
            )
        )
    return ChunkedReview(review_id=f"synth-{index:05d}", chunks=tuple(chunks), gold_label=label)


def generate(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Write MCEB files + manifest under out_dir; fully reproducible from the seed.

    The returned manifest is re-loaded from disk, so every load-time invariant
    has been checked on the artifacts actually written.
    """
    out_dir = Path(out_dir)
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)

    directions = signal_directions(spec.dim, spec.seed)
    # Per-sample child seeds keep samples independent and order-free.
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_samples + 1)[1:]

    n_train = max(1, int(round(spec.train_fraction * spec.num_samples)))
    samples = []
    for i in range(spec.num_samples):
        review = _sample_review(i, spec, directions, np.random.default_rng(children[i]))
        rel_path = f"embeddings/{review.review_id}.mceb"
        write_embeddings(review, out_dir / rel_path)
        samples.append(
            ManifestSample(
                review_id=review.review_id,
                path=rel_path,
                gold_label=review.gold_label,
                split="train" if i < n_train else "test",
            )
        )
    manifest = DatasetManifest(
        version=1, aspect_catalog=AspectCatalog(), samples=tuple(samples), root=out_dir
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return load_manifest(out_dir / "manifest.json")
