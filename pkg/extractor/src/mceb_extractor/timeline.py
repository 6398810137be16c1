"""Chunk timeline rules shared with the trainer by contract.

Frame instants are t = k/fps for k = 0, 1, 2, ... with t < duration; chunks
tile [0, duration) in chunk_len_s steps, the last possibly partial.
"""

from __future__ import annotations

import math

_EPS = 1e-9


def count_below(limit: float) -> int:
    return int(math.ceil(limit - _EPS))


def sample_instants(duration_s: float, fps: float) -> list[float]:
    total = count_below(duration_s * fps)
    return [k / fps for k in range(total)]


def segment_timeline(
    duration_s: float, fps: float = 3.0, chunk_len_s: float = 2.0
) -> list[tuple[float, float, int]]:
    """(start_s, end_s, frame_count) triples covering [0, duration) exactly once."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n_chunks = count_below(duration_s / chunk_len_s)
    counts = [0] * n_chunks
    for t in sample_instants(duration_s, fps):
        idx = min(int(t / chunk_len_s + _EPS), n_chunks - 1)
        counts[idx] += 1
    return [
        (i * chunk_len_s, min((i + 1) * chunk_len_s, duration_s), counts[i])
        for i in range(n_chunks)
    ]
