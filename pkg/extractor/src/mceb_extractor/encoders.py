"""Frozen text/image encoders behind a name+version registry.

The stub encoders are fully deterministic (content-hash seeded projections)
and exist so the pipeline can run and be byte-reproducible without model
weights. Real pretrained vision-language adapters plug in through the same
interface; they run in inference mode and are pinned by model id.

Encoder spec strings: "stub" (the built-in deterministic pair) or
"clip:<model-id>" for a transformers-backed adapter.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import cv2
import numpy as np

EMBED_DIM = 512


class TextEncoder(Protocol):
    name: str
    version: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class ImageEncoder(Protocol):
    name: str
    version: str
    dim: int

    def encode(self, frame_bgr: np.ndarray) -> np.ndarray: ...


def _seed_from_bytes(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


class StubTextEncoder:
    """Hash-seeded unit vectors: equal texts map to equal embeddings, always."""

    name = "stub-text"
    version = "1"
    dim = EMBED_DIM

    def encode(self, text: str) -> np.ndarray:
        rng = np.random.default_rng(_seed_from_bytes(b"stub-text:1:" + text.encode("utf-8")))
        return _unit(rng.standard_normal(self.dim)).astype(np.float32)


class StubImageEncoder:
    """Fixed random projection of a 16x16 grayscale thumbnail to 512-d."""

    name = "stub-image"
    version = "1"
    dim = EMBED_DIM
    _THUMB = 16

    def __init__(self):
        rng = np.random.default_rng(_seed_from_bytes(b"stub-image:1:projection"))
        n_in = self._THUMB * self._THUMB
        self._projection = rng.standard_normal((n_in, self.dim)) / np.sqrt(n_in)

    def encode(self, frame_bgr: np.ndarray) -> np.ndarray:
        if frame_bgr.ndim != 3 or frame_bgr.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 BGR frame, got shape {frame_bgr.shape}")
        gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY)
        thumb = cv2.resize(gray, (self._THUMB, self._THUMB), interpolation=cv2.INTER_AREA)
        flat = thumb.astype(np.float64).reshape(-1) / 255.0
        return _unit(flat @ self._projection).astype(np.float32)


class ClipTextEncoder:
    """Pretrained dual-encoder text side (inference mode, weights frozen)."""

    def __init__(self, model_id: str):
        from transformers import CLIPModel, CLIPProcessor  # heavyweight, optional

        self.name = f"clip-text:{model_id}"
        self.version = model_id
        self._model = CLIPModel.from_pretrained(model_id).eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = int(self._model.config.projection_dim)

    def encode(self, text: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            inputs = self._processor(
                text=[text], return_tensors="pt", padding=True, truncation=True
            )
            features = self._model.get_text_features(**inputs)
        return features[0].numpy().astype(np.float32)


class ClipImageEncoder:
    """Pretrained dual-encoder vision side (inference mode, weights frozen)."""

    def __init__(self, model_id: str):
        from transformers import CLIPModel, CLIPProcessor

        self.name = f"clip-image:{model_id}"
        self.version = model_id
        self._model = CLIPModel.from_pretrained(model_id).eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = int(self._model.config.projection_dim)

    def encode(self, frame_bgr: np.ndarray) -> np.ndarray:
        import torch

        rgb = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2RGB)
        with torch.no_grad():
            inputs = self._processor(images=rgb, return_tensors="pt")
            features = self._model.get_image_features(**inputs)
        return features[0].numpy().astype(np.float32)


def get_text_encoder(spec: str) -> TextEncoder:
    if spec == "stub":
        return StubTextEncoder()
    if spec.startswith("clip:"):
        return ClipTextEncoder(spec.split(":", 1)[1])
    raise ValueError(f"unknown text encoder spec {spec!r} (use 'stub' or 'clip:<model-id>')")


def get_image_encoder(spec: str) -> ImageEncoder:
    if spec == "stub":
        return StubImageEncoder()
    if spec.startswith("clip:"):
        return ClipImageEncoder(spec.split(":", 1)[1])
    raise ValueError(f"unknown image encoder spec {spec!r} (use 'stub' or 'clip:<model-id>')")
