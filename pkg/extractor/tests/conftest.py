import cv2
import numpy as np
import pytest


def render_clip(path, duration_s=5.0, fps=15, size=(64, 48), seed=1234):
    """Write a deterministic MJPG test clip: moving gradient + per-frame noise."""
    rng = np.random.default_rng(seed)
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, size
    )
    if not writer.isOpened():
        raise RuntimeError("cv2.VideoWriter failed to open (MJPG)")
    w, h = size
    n_frames = int(round(duration_s * fps))
    xs = np.linspace(0, 255, w, dtype=np.float64)[None, :]
    for i in range(n_frames):
        base = (xs + 3.0 * i) % 256.0
        frame = np.repeat(base, h, axis=0).astype(np.uint8)
        noise = rng.integers(0, 30, size=(h, w), dtype=np.uint8)
        gray = cv2.add(frame, noise)
        writer.write(cv2.cvtColor(gray, cv2.COLOR_GRAY2BGR))
    writer.release()
    return path


@pytest.fixture(scope="session")
def fixture_clip(tmp_path_factory):
    """A 5-second, 15 fps clip (75 frames)."""
    path = tmp_path_factory.mktemp("clips") / "fixture.avi"
    return render_clip(path)
