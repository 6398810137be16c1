import pytest

from mceb_extractor.timeline import sample_instants, segment_timeline


def test_five_second_clip():
    assert segment_timeline(5.0) == [(0.0, 2.0, 6), (2.0, 4.0, 6), (4.0, 5.0, 3)]


def test_exact_two_seconds():
    assert segment_timeline(2.0) == [(0.0, 2.0, 6)]


def test_short_clip():
    assert segment_timeline(0.5) == [(0.0, 0.5, 2)]


def test_counts_cover_all_instants():
    for duration in (0.4, 1.0, 3.7, 6.0, 11.31):
        chunks = segment_timeline(duration)
        assert sum(c for _, _, c in chunks) == len(sample_instants(duration, 3.0))
        assert chunks[-1][1] == pytest.approx(duration)


def test_matches_trainer_rule():
    # the trainer package is the reference for the shared segmentation rule
    trainer_chunking = pytest.importorskip("complaintnet.chunking")
    for duration in (0.5, 2.0, 4.9, 5.0, 7.25, 30.0):
        ours = segment_timeline(duration)
        theirs = trainer_chunking.segment_timeline(
            trainer_chunking.TimelineSpec(duration_s=duration)
        )
        assert len(ours) == len(theirs)
        for (s1, e1, c1), (s2, e2, c2) in zip(ours, theirs):
            assert s1 == pytest.approx(s2)
            assert e1 == pytest.approx(e2)
            assert c1 == c2
