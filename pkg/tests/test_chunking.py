"""Timeline segmentation, frame aggregation, and batch padding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from complaintnet.chunking import (
    PaddedBatch,
    TimelineSpec,
    aggregate_frame_embeddings,
    pad_batch,
    sample_instants,
    segment_timeline,
)
from complaintnet.data_model import AspectLabelVector, Chunk, ChunkedReview


def make_review(rng, dim=6, n_chunks=3, review_id="r", gold=None):
    chunks = []
    for i in range(n_chunks):
        chunks.append(
            Chunk(
                start_s=2.0 * i,
                end_s=2.0 * (i + 1),
                text_embedding=rng.normal(size=dim).astype(np.float32),
                image_embedding=rng.normal(size=dim).astype(np.float32),
            )
        )
    return ChunkedReview(review_id=review_id, chunks=tuple(chunks), gold_label=gold)


class TestSegmentTimeline:
    def test_five_seconds(self):
        spec = TimelineSpec(duration_s=5.0)
        assert segment_timeline(spec) == [(0.0, 2.0, 6), (2.0, 4.0, 6), (4.0, 5.0, 3)]

    def test_exactly_one_chunk(self):
        assert segment_timeline(TimelineSpec(duration_s=2.0)) == [(0.0, 2.0, 6)]

    def test_short_clip(self):
        # Sampling instants at stride 1/3 s below 0.5 s: t = 0 and t = 1/3.
        assert segment_timeline(TimelineSpec(duration_s=0.5)) == [(0.0, 0.5, 2)]

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError, match="duration"):
            TimelineSpec(duration_s=0.0)

    @settings(max_examples=200, deadline=None)
    @given(
        duration=st.floats(min_value=0.05, max_value=600.0, allow_nan=False),
        fps=st.sampled_from([1.0, 2.0, 3.0, 5.0, 12.5, 30.0]),
    )
    def test_frame_count_identity_and_coverage(self, duration, fps):
        spec = TimelineSpec(duration_s=duration, fps=fps)
        chunks = segment_timeline(spec)
        # total frames equals the number of sampling instants below duration
        total = sum(c[2] for c in chunks)
        assert total == len(sample_instants(spec))
        # chunk spans tile [0, duration) exactly once
        assert chunks[0][0] == 0.0
        assert chunks[-1][1] == pytest.approx(duration)
        for (s0, e0, _), (s1, _, _) in zip(chunks, chunks[1:]):
            assert e0 == pytest.approx(s1)
            assert e0 > s0


class TestAggregateFrames:
    def test_identical_frames(self):
        v = np.array([0.5, -1.0, 2.0])
        out = aggregate_frame_embeddings([v] * 6)
        np.testing.assert_allclose(out, v)

    def test_symmetry(self):
        out = aggregate_frame_embeddings([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_column_means(self):
        frames = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])]
        np.testing.assert_allclose(aggregate_frame_embeddings(frames), [3.0, 4.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            aggregate_frame_embeddings([])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            aggregate_frame_embeddings([np.zeros(3), np.zeros(4)])


class TestPadBatch:
    def test_two_reviews(self):
        rng = np.random.default_rng(0)
        batch = pad_batch([make_review(rng, n_chunks=3), make_review(rng, n_chunks=5)])
        assert batch.text.shape == (2, 5, 6)
        np.testing.assert_array_equal(batch.mask[0], [True, True, True, False, False])
        np.testing.assert_array_equal(batch.mask[1], [True] * 5)

    def test_single_review_no_padding(self):
        rng = np.random.default_rng(1)
        batch = pad_batch([make_review(rng, n_chunks=4)])
        assert batch.mask.all()
        assert batch.text.shape == (1, 4, 6)

    def test_padding_is_zero_and_mask_counts(self):
        rng = np.random.default_rng(2)
        reviews = [make_review(rng, n_chunks=k) for k in (1, 2, 4)]
        batch = pad_batch(reviews)
        false_counts = [(~batch.mask[i]).sum() for i in range(3)]
        assert false_counts == [3, 2, 0]
        for i, k in enumerate((1, 2, 4)):
            assert not batch.text[i, k:].any()
            assert not batch.image[i, k:].any()

    def test_valid_rows_preserved_bitwise(self):
        rng = np.random.default_rng(3)
        reviews = [make_review(rng, n_chunks=k) for k in (2, 3)]
        batch = pad_batch(reviews)
        for i, review in enumerate(reviews):
            for c_idx, chunk in enumerate(review.chunks):
                np.testing.assert_array_equal(batch.text[i, c_idx], chunk.text_embedding)
                np.testing.assert_array_equal(batch.image[i, c_idx], chunk.image_embedding)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            pad_batch([])

    def test_dim_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="dim"):
            pad_batch([make_review(rng, dim=6), make_review(rng, dim=8)])

    def test_labels_carried_when_all_present(self):
        rng = np.random.default_rng(5)
        gold = AspectLabelVector((1, 0, 2, 0, 0))
        batch = pad_batch([make_review(rng, gold=gold), make_review(rng, gold=gold)])
        assert batch.labels == (gold, gold)

    @settings(max_examples=50, deadline=None)
    @given(lengths=st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=6))
    def test_row_order_and_content_property(self, lengths):
        rng = np.random.default_rng(sum(lengths))
        reviews = [make_review(rng, n_chunks=k, review_id=f"r{i}") for i, k in enumerate(lengths)]
        batch = pad_batch(reviews)
        assert batch.text.shape[1] == max(lengths)
        np.testing.assert_array_equal(batch.lengths(), lengths)

    def test_padded_batch_validates_prefix(self):
        text = np.zeros((1, 3, 2))
        image = np.zeros((1, 3, 2))
        mask = np.array([[True, False, True]])
        with pytest.raises(ValueError, match="true-prefix"):
            PaddedBatch(text=text, image=image, mask=mask)

    def test_padded_batch_rejects_nonzero_padding(self):
        text = np.ones((1, 3, 2))
        image = np.zeros((1, 3, 2))
        mask = np.array([[True, True, False]])
        with pytest.raises(ValueError, match="non-zero padded rows"):
            PaddedBatch(text=text, image=image, mask=mask)
