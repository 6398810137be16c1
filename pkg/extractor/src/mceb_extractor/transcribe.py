"""Speech-to-text behind a name+version registry; segments carry timestamps.

The null transcriber emits no segments (silent-video behavior: every chunk
falls back to the empty-string text embedding). The stub transcriber emits
a deterministic one-segment-per-second placeholder stream so chunk
assignment is exercised without audio decoding. A real speech model plugs
in through the same interface ("whisper:<model-id>") and owns audio
demuxing for its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol


@dataclass(frozen=True)
class TranscriptSegment:
    start_s: float
    end_s: float
    text: str

    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


class Transcriber(Protocol):
    name: str
    version: str

    def transcribe(self, video_path: str, duration_s: float) -> list[TranscriptSegment]: ...


class NullTranscriber:
    """No speech: models the silent-video case."""

    name = "null"
    version = "1"

    def transcribe(self, video_path: str, duration_s: float) -> list[TranscriptSegment]:
        return []


class StubTranscriber:
    """One deterministic placeholder segment per whole second of video."""

    name = "stub"
    version = "1"

    def transcribe(self, video_path: str, duration_s: float) -> list[TranscriptSegment]:
        out = []
        second = 0
        while second < duration_s:
            end = min(second + 1.0, duration_s)
            out.append(TranscriptSegment(float(second), float(end), f"spoken segment {second}"))
            second += 1
        return out


class WhisperTranscriber:
    """Pretrained speech-to-text (inference mode); requires decodable audio."""

    def __init__(self, model_id: str):
        from transformers import pipeline  # heavyweight, optional

        self.name = f"whisper:{model_id}"
        self.version = model_id
        self._pipe = pipeline(
            "automatic-speech-recognition", model=model_id, return_timestamps=True
        )

    def transcribe(self, video_path: str, duration_s: float) -> list[TranscriptSegment]:
        result = self._pipe(video_path)
        segments = []
        for piece in result.get("chunks", []):
            start, end = piece["timestamp"]
            if start is None:
                continue
            segments.append(
                TranscriptSegment(float(start), float(end if end is not None else duration_s),
                                  piece["text"].strip())
            )
        return segments


def get_transcriber(spec: str) -> Transcriber:
    if spec == "null":
        return NullTranscriber()
    if spec == "stub":
        return StubTranscriber()
    if spec.startswith("whisper:"):
        return WhisperTranscriber(spec.split(":", 1)[1])
    raise ValueError(
        f"unknown transcriber spec {spec!r} (use 'null', 'stub' or 'whisper:<model-id>')"
    )
