"""Adapter that turns real videos into MCEB embedding files for the trainer."""

from .extract import ExtractionJob, ExtractionError, extract
from .mceb import write_mceb, append_manifest_entry

__all__ = [
    "ExtractionJob",
    "ExtractionError",
    "append_manifest_entry",
    "extract",
    "write_mceb",
]

__version__ = "0.1.0"
