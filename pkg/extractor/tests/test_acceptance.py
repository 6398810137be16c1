"""Bridge conformance criterion, one PASS/FAIL line (run with pytest -s)."""

import pytest

from mceb_extractor.cli import main
from mceb_extractor.extract import ExtractionJob, extract


def test_bridge_conformance(fixture_clip, tmp_path):
    """5 s clip -> 3 chunks (6,6,3), 512-wide, trainer-loadable, byte-stable."""
    data_model = pytest.importorskip("complaintnet.data_model")
    out = tmp_path / "ds"
    out.mkdir()
    results = []
    for name in ("run1", "run2"):
        job = ExtractionJob(
            video_path=str(fixture_clip),
            output_path=str(out / f"{name}.mceb"),
        )
        results.append(extract(job))
    layout_ok = all(r.chunk_frame_counts == (6, 6, 3) for r in results)
    bytes_ok = (out / "run1.mceb").read_bytes() == (out / "run2.mceb").read_bytes()
    review = data_model.read_embeddings(out / "run1.mceb")
    dims_ok = review.dim == 512 and len(review.chunks) == 3
    ok = layout_ok and bytes_ok and dims_ok
    status = "PASS" if ok else "FAIL"
    print(
        f"ACCEPTANCE bridge-conformance: {status} "
        f"(chunks {results[0].chunk_frame_counts}, dim {review.dim}, "
        f"byte-identical {bytes_ok})"
    )
    assert ok


def test_cli_end_to_end(fixture_clip, tmp_path, capsys):
    out = tmp_path / "cli_out"
    rc = main(
        [
            str(fixture_clip),
            "--out",
            str(out),
            "--manifest",
            str(out / "manifest.json"),
        ]
    )
    assert rc == 0
    assert (out / "fixture.mceb").exists()
    assert (out / "manifest.json").exists()
    stdout = capsys.readouterr().out
    assert "[6, 6, 3]" in stdout


def test_cli_reports_failures_with_exit_2(tmp_path, capsys):
    bogus = tmp_path / "broken.avi"
    bogus.write_bytes(b"nope")
    rc = main([str(bogus), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "error" in capsys.readouterr().err
