"""End-to-end model assembly: modality wiring, ablation variants, checkpoints.

A model is configured by which modalities it consumes, whether the image
branch passes through the trainable segment encoder, and how deep the
classifier stack is. Depth 0 with the encoder disabled leaves pooled frozen
embeddings + linear head (the frozen-encoder ablation).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .classifier import ClassifierStack, LogitsMatrix, fuse
from .data_model import FormatError
from .isec import AttentionConfig, IsecEncoder

MODALITY_TEXT = "text"
MODALITY_IMAGE = "image"
MODALITY_BOTH = "both"
MODALITIES = (MODALITY_TEXT, MODALITY_IMAGE, MODALITY_BOTH)

CHECKPOINT_MAGIC = b"MCCK"
CHECKPOINT_VERSION = 1

# Parameter group names for the two learning-rate groups.
GROUP_ISEC = "isec"
GROUP_CLASSIFIER = "classifier"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches; defaults follow the full-size configuration."""

    dim: int = 512
    isec_heads: int = 8
    classifier_heads: int = 8
    classifier_blocks: int = 16
    dropout: float = 0.2
    use_isec: bool = True
    modality: str = MODALITY_BOTH

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.classifier_blocks < 0:
            raise ValueError("classifier_blocks must be >= 0")
        # Validate head geometry eagerly.
        if self.uses_image and self.use_isec:
            AttentionConfig(self.dim, self.isec_heads, self.dropout)
        AttentionConfig(self.dim, self.classifier_heads, self.dropout)

    @property
    def uses_text(self) -> bool:
        return self.modality in (MODALITY_TEXT, MODALITY_BOTH)

    @property
    def uses_image(self) -> bool:
        return self.modality in (MODALITY_IMAGE, MODALITY_BOTH)


class ComplaintModel:
    """Forward/backward over one sample: modalities -> fusion -> stack -> 5x3 logits."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.isec: Optional[IsecEncoder] = None
        if cfg.uses_image and cfg.use_isec:
            self.isec = IsecEncoder(AttentionConfig(cfg.dim, cfg.isec_heads, cfg.dropout), rng)
        self.stack = ClassifierStack(
            AttentionConfig(cfg.dim, cfg.classifier_heads, cfg.dropout),
            cfg.classifier_blocks,
            rng,
        )
        self._last_text_len: int = 0

    # -- forward / backward -------------------------------------------------

    def forward_sample(
        self,
        text: np.ndarray,
        image: np.ndarray,
        mask: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> LogitsMatrix:
        """One review's chunk sequences (text, image both (L x dim), shared mask) to logits."""
        mask = np.asarray(mask, dtype=bool)
        parts = []
        part_masks = []
        if self.cfg.uses_text:
            parts.append(np.asarray(text, dtype=np.float64))
            part_masks.append(mask)
        if self.cfg.uses_image:
            img = np.asarray(image, dtype=np.float64)
            if self.isec is not None:
                y_is, is_mask = self.isec.forward(img, mask, training=training, rng=rng)
            else:
                y_is, is_mask = img, mask
            parts.append(y_is)
            part_masks.append(is_mask)
        if len(parts) == 2:
            fused, fused_mask = fuse(parts[0], part_masks[0], parts[1], part_masks[1])
            self._last_text_len = parts[0].shape[0]
        else:
            fused, fused_mask = parts[0], part_masks[0]
            self._last_text_len = parts[0].shape[0] if self.cfg.uses_text else 0
        return self.stack.forward(fused, fused_mask, training=training, rng=rng)

    def backward_sample(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients for the most recent forward pass."""
        dfused = self.stack.backward(dlogits)
        if self.cfg.uses_image and self.isec is not None:
            d_image_branch = dfused[self._last_text_len :]
            self.isec.backward(d_image_branch)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.isec is not None:
            out.update(self.isec.params(GROUP_ISEC))
        out.update(self.stack.params(GROUP_CLASSIFIER))
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.isec is not None:
            out.update(self.isec.grads(GROUP_ISEC))
        out.update(self.stack.grads(GROUP_CLASSIFIER))
        return out

    def zero_grads(self) -> None:
        if self.isec is not None:
            self.isec.zero_grads()
        self.stack.zero_grads()

    def param_groups(self) -> dict[str, list[str]]:
        """Learning-rate groups: segment-encoder parameters vs everything else."""
        groups: dict[str, list[str]] = {GROUP_ISEC: [], GROUP_CLASSIFIER: []}
        for name in self.parameters():
            key = GROUP_ISEC if name.startswith(f"{GROUP_ISEC}.") else GROUP_CLASSIFIER
            groups[key].append(name)
        return {k: v for k, v in groups.items() if v}


# ---------------------------------------------------------------------------
# Checkpoints: JSON header (config + parameter shapes) + float32 blobs.
#
# Little-endian layout:
#   magic      4 bytes  b"MCCK"
#   version    u32
#   header_len u32
#   header     JSON bytes (utf-8)
#   blobs      float32 arrays, concatenated in header order
# ---------------------------------------------------------------------------

_CKPT_HEADER = struct.Struct("<4sII")


def save_checkpoint(model: ComplaintModel, path: str | Path) -> None:
    path = Path(path)
    params = model.parameters()
    header = {
        "config": asdict(model.cfg),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    tmp.replace(path)  # atomic publish


def load_checkpoint(path: str | Path) -> ComplaintModel:
    """Rebuild a model from a checkpoint; shapes are verified before accepting."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header", offset=len(raw))
    magic, version, header_len = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    off = _CKPT_HEADER.size
    try:
        header = json.loads(raw[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid checkpoint header: {exc}", offset=off) from exc
    off += header_len
    cfg = ModelConfig(**header["config"])
    model = ComplaintModel(cfg, seed=0)
    params = model.parameters()
    declared = header["params"]
    declared_names = [p["name"] for p in declared]
    if declared_names != list(params.keys()):
        raise FormatError(
            f"{path}: checkpoint parameter set does not match config "
            f"(expected {len(params)} entries, got {len(declared_names)})"
        )
    for entry in declared:
        target = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != target.shape:
            raise FormatError(
                f"{path}: parameter {entry['name']} has shape {shape}, expected {target.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * count
        if off + nbytes > len(raw):
            raise FormatError(f"{path}: truncated parameter blob for {entry['name']}", offset=off)
        blob = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        target[...] = blob.astype(np.float64)
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after parameters", offset=off)
    return model


def ablation_config(base: ModelConfig, condition: str) -> ModelConfig:
    """Derive the model configuration for one ablation condition.

    Conditions: multimodal (the full model), video_only (image branch with the
    segment encoder), audio_only (transcript-text branch), without_isec (raw
    image tokens fused directly), frozen (no encoder, no stack: pooled frozen
    embeddings + linear head).
    """
    if condition == "multimodal":
        return replace(base, modality=MODALITY_BOTH, use_isec=True)
    if condition == "video_only":
        return replace(base, modality=MODALITY_IMAGE, use_isec=True)
    if condition == "audio_only":
        return replace(base, modality=MODALITY_TEXT, use_isec=False)
    if condition == "without_isec":
        return replace(base, modality=MODALITY_BOTH, use_isec=False)
    if condition == "frozen":
        return replace(base, modality=MODALITY_BOTH, use_isec=False, classifier_blocks=0)
    raise ValueError(f"unknown ablation condition: {condition!r}")


ABLATION_CONDITIONS = ("video_only", "audio_only", "multimodal", "frozen", "without_isec")
