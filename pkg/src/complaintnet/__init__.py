"""Desk-scale trainable multimodal aspect-based complaint identification."""

from .data_model import (
    AspectCatalog,
    AspectLabelVector,
    Chunk,
    ChunkedReview,
    DatasetManifest,
    EmbeddingSequence,
    FormatError,
    decode_label,
    encode_label,
    load_manifest,
    read_embeddings,
    save_manifest,
    write_embeddings,
)
from .model import ComplaintModel, ModelConfig, load_checkpoint, save_checkpoint

__all__ = [
    "AspectCatalog",
    "AspectLabelVector",
    "Chunk",
    "ChunkedReview",
    "ComplaintModel",
    "DatasetManifest",
    "EmbeddingSequence",
    "FormatError",
    "ModelConfig",
    "decode_label",
    "encode_label",
    "load_checkpoint",
    "load_manifest",
    "read_embeddings",
    "save_checkpoint",
    "save_manifest",
    "write_embeddings",
]

__version__ = "0.1.0"
