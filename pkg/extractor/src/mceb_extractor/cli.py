"""Command line for the extraction bridge.

    mceb-extract --out DIR [--manifest DIR/manifest.json] video1.mp4 video2.avi ...

Each video becomes <out>/<stem>.mceb; with --manifest, an entry per video is
appended (the manifest is created when missing). Encoders and the
transcriber are pinned by spec string.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .extract import ExtractionError, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mceb-extract", description=__doc__)
    parser.add_argument("videos", nargs="+", help="input video files")
    parser.add_argument("--out", required=True, help="output directory for .mceb files")
    parser.add_argument("--manifest", help="manifest JSON to append to (created if missing)")
    parser.add_argument("--split", default="test", choices=["train", "test"])
    parser.add_argument("--fps", type=float, default=3.0, help="frame sampling rate")
    parser.add_argument("--chunk-len", type=float, default=2.0, help="chunk length in seconds")
    parser.add_argument("--text-encoder", default="stub", help="'stub' or 'clip:<model-id>'")
    parser.add_argument("--image-encoder", default="stub", help="'stub' or 'clip:<model-id>'")
    parser.add_argument(
        "--transcriber", default="stub", help="'null', 'stub' or 'whisper:<model-id>'"
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for video in args.videos:
        stem = Path(video).stem
        job = ExtractionJob(
            video_path=video,
            output_path=str(out_dir / f"{stem}.mceb"),
            fps=args.fps,
            chunk_len_s=args.chunk_len,
            text_encoder=args.text_encoder,
            image_encoder=args.image_encoder,
            transcriber=args.transcriber,
            manifest_path=args.manifest,
            split=args.split,
        )
        try:
            result = extract(job)
        except (ExtractionError, ValueError, OSError) as exc:
            print(f"error: {video}: {exc}", file=sys.stderr)
            failures += 1
            continue
        print(
            f"{video}: {result.duration_s:.2f}s -> {len(result.chunk_frame_counts)} chunks "
            f"{list(result.chunk_frame_counts)} at {result.mceb_path}"
        )
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
