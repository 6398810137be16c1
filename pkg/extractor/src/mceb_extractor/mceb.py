"""Writer for the MCEB embedding format and the dataset manifest.

Implements the documented wire format directly (no dependency on the
training package) so the two sides stay interoperable by contract:

  magic "MCEB" | version u32 | dim u32 | chunk_count u32
  per chunk: start_s f32, end_s f32, text f32*dim, image f32*dim

all little-endian. The manifest is JSON with the sample list schema the
trainer loads.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MCEB_MAGIC = b"MCEB"
MCEB_VERSION = 1

ASPECT_NAMES = [
    "Transaction",
    "CustomerService",
    "ClaimedBenefit",
    "ServiceTypes",
    "Miscellaneous",
]

_HEADER = struct.Struct("<4sIII")


def write_mceb(
    chunks: Sequence[tuple[float, float, np.ndarray, np.ndarray]],
    path: str | Path,
) -> None:
    """Write (start_s, end_s, text_vec, image_vec) chunks to one MCEB file."""
    if not chunks:
        raise ValueError("cannot write an MCEB file with zero chunks")
    dim = int(np.asarray(chunks[0][2]).shape[0])
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MCEB_MAGIC, MCEB_VERSION, dim, len(chunks)))
        for start_s, end_s, text, image in chunks:
            text = np.asarray(text, dtype="<f4")
            image = np.asarray(image, dtype="<f4")
            if text.shape != (dim,) or image.shape != (dim,):
                raise ValueError(
                    f"chunk embeddings must all be {dim}-wide, got {text.shape}/{image.shape}"
                )
            fh.write(struct.pack("<ff", float(start_s), float(end_s)))
            fh.write(text.tobytes())
            fh.write(image.tobytes())


def append_manifest_entry(
    manifest_path: str | Path,
    review_id: str,
    mceb_relpath: str,
    split: str = "test",
    gold_label: Optional[Sequence[int]] = None,
) -> None:
    """Add one sample to a manifest JSON, creating the manifest if needed."""
    manifest_path = Path(manifest_path)
    if manifest_path.exists():
        doc = json.loads(manifest_path.read_text())
    else:
        doc = {"version": 1, "aspects": ASPECT_NAMES, "samples": []}
    existing = {s["review_id"] for s in doc["samples"]}
    if review_id in existing:
        raise ValueError(f"review id {review_id!r} already present in {manifest_path}")
    doc["samples"].append(
        {
            "review_id": review_id,
            "path": mceb_relpath,
            "gold_label": list(gold_label) if gold_label is not None else None,
            "split": split,
        }
    )
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
