"""Extraction job orchestration: video -> chunked two-modality MCEB file.

Pipeline per video: probe duration, sample frames at fps (t = k/fps below
the duration), transcribe speech, split the timeline into chunk_len_s
chunks, assign transcript segments to chunks by midpoint, encode each
chunk's text (empty string when no speech landed in it) and mean-pool its
frame embeddings, then write the MCEB file and a manifest entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .encoders import EMBED_DIM, ImageEncoder, TextEncoder, get_image_encoder, get_text_encoder
from .mceb import append_manifest_entry, write_mceb
from .timeline import segment_timeline
from .transcribe import Transcriber, TranscriptSegment, get_transcriber


class ExtractionError(RuntimeError):
    """Unreadable media or a pipeline contract violation."""


@dataclass(frozen=True)
class ExtractionJob:
    """One video to convert, with pinned encoder identities."""

    video_path: str
    output_path: str
    fps: float = 3.0
    chunk_len_s: float = 2.0
    text_encoder: str = "stub"
    image_encoder: str = "stub"
    transcriber: str = "stub"
    manifest_path: Optional[str] = None
    split: str = "test"
    review_id: Optional[str] = None

    def __post_init__(self):
        if self.fps <= 0 or self.chunk_len_s <= 0:
            raise ValueError("fps and chunk_len_s must be positive")
        if self.chunk_len_s > 2.0:
            # the trainer's data model rejects chunks spanning more than 2 s
            raise ValueError(
                f"chunk_len_s {self.chunk_len_s} exceeds the 2.0 s maximum the trainer accepts"
            )
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class ExtractionResult:
    review_id: str
    mceb_path: Path
    chunk_frame_counts: tuple[int, ...]
    duration_s: float
    transcript: tuple[TranscriptSegment, ...] = field(default_factory=tuple)


def probe_video(path: str) -> tuple[cv2.VideoCapture, float, float, int]:
    capture = cv2.VideoCapture(path)
    if not capture.isOpened():
        raise ExtractionError(f"cannot open video: {path}")
    native_fps = capture.get(cv2.CAP_PROP_FPS)
    frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
    if native_fps <= 0 or frame_count <= 0:
        capture.release()
        raise ExtractionError(
            f"video {path} reports no usable timing (fps={native_fps}, frames={frame_count})"
        )
    duration = frame_count / native_fps
    return capture, duration, native_fps, frame_count


def sample_frames(
    capture: cv2.VideoCapture,
    instants: list[float],
    native_fps: float,
    frame_count: int,
) -> list[np.ndarray]:
    """Decode sequentially and keep the frame nearest each sampling instant."""
    wanted = [min(int(round(t * native_fps)), frame_count - 1) for t in instants]
    needed = sorted(set(wanted))
    by_index: dict[int, np.ndarray] = {}
    pointer = 0
    for target in range(frame_count):
        ok, frame = capture.read()
        if not ok:
            break
        if pointer < len(needed) and target == needed[pointer]:
            by_index[target] = frame
            pointer += 1
        if pointer >= len(needed):
            break
    missing = [i for i in wanted if i not in by_index]
    if missing:
        raise ExtractionError(f"failed to decode frames at indices {missing[:5]}")
    return [by_index[i] for i in wanted]


def assign_transcript(
    segments: list[TranscriptSegment], chunk_start: float, chunk_end: float
) -> str:
    """Join the texts of segments whose midpoint lands in [start, end)."""
    inside = [s.text for s in segments if chunk_start <= s.midpoint() < chunk_end]
    return " ".join(inside)


def extract(job: ExtractionJob) -> ExtractionResult:
    """Run one job; returns the chunk layout actually written.

    Chunk timelines follow the trainer's segmentation rule exactly, frame
    embeddings are mean-pooled per chunk, and chunks with no transcript get
    the encoder's empty-string embedding.
    """
    text_encoder: TextEncoder = get_text_encoder(job.text_encoder)
    image_encoder: ImageEncoder = get_image_encoder(job.image_encoder)
    transcriber: Transcriber = get_transcriber(job.transcriber)
    for encoder in (text_encoder, image_encoder):
        if encoder.dim != EMBED_DIM:
            raise ExtractionError(
                f"encoder {encoder.name} emits {encoder.dim}-wide vectors; {EMBED_DIM} required"
            )

    capture, duration, native_fps, frame_count = probe_video(job.video_path)
    try:
        timeline = segment_timeline(duration, fps=job.fps, chunk_len_s=job.chunk_len_s)
        instants = [k / job.fps for k in range(sum(c for _, _, c in timeline))]
        frames = sample_frames(capture, instants, native_fps, frame_count)
    finally:
        capture.release()

    segments = transcriber.transcribe(job.video_path, duration)
    chunks = []
    cursor = 0
    for start_s, end_s, n_frames in timeline:
        chunk_frames = frames[cursor : cursor + n_frames]
        cursor += n_frames
        if not chunk_frames:
            raise ExtractionError(f"chunk [{start_s}, {end_s}) holds no frames")
        frame_vectors = np.stack([image_encoder.encode(f) for f in chunk_frames])
        image_vec = frame_vectors.mean(axis=0).astype(np.float32)
        text_vec = text_encoder.encode(assign_transcript(segments, start_s, end_s))
        chunks.append((start_s, end_s, text_vec, image_vec))

    mceb_path = Path(job.output_path)
    mceb_path.parent.mkdir(parents=True, exist_ok=True)
    write_mceb(chunks, mceb_path)

    review_id = job.review_id or Path(job.video_path).stem
    if job.manifest_path is not None:
        manifest_path = Path(job.manifest_path)
        try:
            rel = mceb_path.relative_to(manifest_path.parent)
        except ValueError as exc:
            raise ExtractionError(
                f"MCEB output {mceb_path} must live under the manifest directory "
                f"{manifest_path.parent}"
            ) from exc
        append_manifest_entry(manifest_path, review_id, str(rel), split=job.split)

    return ExtractionResult(
        review_id=review_id,
        mceb_path=mceb_path,
        chunk_frame_counts=tuple(c for _, _, c in timeline),
        duration_s=duration,
        transcript=tuple(segments),
    )
