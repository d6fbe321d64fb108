from __future__ import annotations

import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advisum.backends import MockCaption, MockOcr
from advisum.bos import (
    NO_CAPTION,
    NO_VISUALS,
    UNKNOWN_SPEAKER,
    DegradedOutputWarning,
    EnrichedTranscript,
    FrameDescription,
    FusedText,
    SpeakerSegment,
    TranscriptSegment,
    WordTimeline,
    build_bos_prompt,
    caption_frame,
    describe_frame,
    fuse_description,
    merge_speaker_transcript,
    ocr_frame,
)
from advisum.errors import BackendError, ContractError, ValidationError


def frame(seed):
    return np.random.default_rng(seed).integers(0, 256, (12, 12, 3), dtype=np.uint8)


def words(spec):
    return WordTimeline([(t, a, b) for t, a, b in spec])


class TestOcr:
    def test_blank_frame_empty(self):
        assert ocr_frame(np.full((8, 8, 3), 30, np.uint8), MockOcr()) == ""

    def test_pinned_text_normalised(self):
        assert ocr_frame(frame(0), MockOcr(text="  NIFTY 50   +1.2% ")) == "NIFTY 50 +1.2%"

    def test_failure_is_backend_error(self):
        with pytest.raises(BackendError):
            ocr_frame(frame(0), MockOcr(fail="1"), 3)

    def test_failure_degrades_in_describe(self):
        with pytest.warns(DegradedOutputWarning):
            d = describe_frame(frame(0), 3, MockOcr(fail="1"), MockCaption())
        assert d.ocr_failed and d.ocr_text == "" and d.fused == d.caption

    @pytest.mark.skip(reason="no OCR engine installed; exercise with an external ocr binding")
    def test_real_backend_reads_rendered_text(self):
        pass


class TestCaption:
    def test_stable(self):
        assert caption_frame(frame(1), MockCaption()) == caption_frame(frame(1), MockCaption())

    def test_distinct_frames_distinct_captions(self):
        assert caption_frame(frame(1), MockCaption()) != caption_frame(frame(2), MockCaption())

    def test_timeout_carries_frame_index(self):
        with pytest.raises(BackendError) as ei:
            caption_frame(frame(1), MockCaption(fail="timeout"), 17)
        assert ei.value.frame_index == 17

    def test_empty_caption_placeholder(self):
        with pytest.warns(DegradedOutputWarning):
            assert caption_frame(frame(1), MockCaption(empty="1")) == NO_CAPTION


class TestFuse:
    def test_no_ocr(self):
        assert fuse_description("", "two speakers at a desk") == "two speakers at a desk"

    def test_order(self):
        f = fuse_description("NIFTY 50", "a stock chart")
        assert f.index("a stock chart") < f.index("NIFTY 50")

    def test_refuses_refusion(self):
        f = fuse_description("NIFTY 50", "a stock chart")
        assert isinstance(f, FusedText)
        with pytest.raises(ContractError):
            fuse_description("x", f)

    def test_empty_caption(self):
        with pytest.raises(ContractError):
            fuse_description("x", "")

    def test_description_invariant(self):
        with pytest.raises(ValidationError):
            FrameDescription(0, "abc", "cap", "cap only")

    @given(st.text(max_size=20).filter(lambda s: s == s.strip()), st.text(min_size=1, max_size=20))
    def test_containment(self, ocr, cap):
        f = fuse_description(ocr, cap)
        assert cap in f and ocr in f


class TestMerge:
    def test_single_segment(self):
        w = words([("a", 0, 1), ("b", 1, 2), ("c", 2, 3)])
        tr = merge_speaker_transcript(w, [SpeakerSegment("S1", 0, 10)])
        assert [(s.speaker_label, s.text) for s in tr.segments] == [("S1", "a b c")]

    def test_two_halves(self):
        w = words([(f"w{i}", i, i + 1) for i in range(10)])
        segs = [SpeakerSegment("S1", 0, 5), SpeakerSegment("S2", 5, 10)]
        tr = merge_speaker_transcript(w, segs)
        assert [(s.speaker_label, s.text) for s in tr.segments] == [
            ("S1", "w0 w1 w2 w3 w4"), ("S2", "w5 w6 w7 w8 w9")]

    def test_boundary_midpoint_goes_to_earlier(self):
        w = words([("edge", 4.5, 5.5)])
        tr = merge_speaker_transcript(w, [SpeakerSegment("S1", 0, 5), SpeakerSegment("S2", 5, 10)])
        assert tr.segments[0].speaker_label == "S1"

    def test_outside_snaps_to_nearest(self):
        w = words([("early", 0, 0.4), ("gap", 6.5, 7.0), ("late", 20, 21)])
        segs = [SpeakerSegment("S1", 1, 5), SpeakerSegment("S2", 7.5, 10)]
        tr = merge_speaker_transcript(w, segs)
        assert [(s.speaker_label, s.text) for s in tr.segments] == [("S1", "early"), ("S2", "gap late")]

    def test_empty_diarization(self):
        tr = merge_speaker_transcript(words([("a", 0, 1), ("b", 1, 2)]), [])
        assert [(s.speaker_label, s.text) for s in tr.segments] == [(UNKNOWN_SPEAKER, "a b")]

    def test_unsorted_diarization(self):
        with pytest.raises(ContractError):
            merge_speaker_transcript(words([("a", 0, 1)]),
                                     [SpeakerSegment("S2", 5, 6), SpeakerSegment("S1", 0, 1)])

    def test_segment_invariant(self):
        with pytest.raises(ValidationError):
            SpeakerSegment("S", 2, 2)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_conservation_and_order(self, data):
        n = data.draw(st.integers(1, 30))
        edges = sorted(data.draw(st.lists(st.floats(0, 60), min_size=2 * n, max_size=2 * n)))
        spec = [(f"t{i % 7}", edges[2 * i], edges[2 * i + 1]) for i in range(n)]
        k = data.draw(st.integers(1, 5))
        cuts = sorted(data.draw(st.lists(st.floats(0, 70), min_size=2 * k, max_size=2 * k, unique=True)))
        segs = [SpeakerSegment(f"S{data.draw(st.integers(0, 2))}", cuts[2 * i], cuts[2 * i + 1])
                for i in range(k)]
        tr = merge_speaker_transcript(words(spec), segs)
        got = Counter(t for s in tr.segments for t in s.text.split())
        assert got == Counter(t for t, _, _ in spec)
        for a, b in zip(tr.segments, tr.segments[1:]):
            assert a.end_s <= b.start_s
            assert a.speaker_label != b.speaker_label


class TestPrompt:
    def transcript(self):
        return EnrichedTranscript([TranscriptSegment("S1", 0, 4, "markets rose"),
                                   TranscriptSegment("S2", 4, 65.5, "buy index funds")])

    def descs(self):
        return [FrameDescription(3, "NIFTY 50", "a stock chart", fuse_description("NIFTY 50", "a stock chart"), 3.0)]

    def test_section_order(self):
        p = build_bos_prompt(self.descs(), self.transcript(), 120, "a1")
        r = p.rendered
        assert r.index("### Instructions") < r.index("### Frame descriptions") < r.index("### Transcript")
        assert "120 tokens" in r and "S1:" in r and "S2:" in r
        assert "[01:05.50]" not in r and "[00:04.00-01:05.50] S2: buy index funds" in r

    def test_deterministic(self):
        a = build_bos_prompt(self.descs(), self.transcript(), 250, "a1")
        b = build_bos_prompt(self.descs(), self.transcript(), 250, "a1")
        assert a == b

    def test_no_descriptions_placeholder(self):
        p = build_bos_prompt([], self.transcript())
        assert NO_VISUALS in p.rendered

    def test_empty_transcript(self):
        with pytest.raises(ContractError):
            build_bos_prompt(self.descs(), EnrichedTranscript([]))

    def test_round_trip(self):
        from advisum.bos import BOSPrompt

        p = build_bos_prompt(self.descs(), self.transcript(), 250, "a1")
        assert BOSPrompt.from_dict(p.to_dict()) == p


def test_no_warning_on_clean_frame():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        describe_frame(frame(4), 0, MockOcr(), MockCaption())
