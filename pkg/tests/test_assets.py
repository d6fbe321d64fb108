from __future__ import annotations

import json
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advisum.assets import (
    AudioTrack,
    FrameSequence,
    VideoAsset,
    artifact_path,
    canonical_json,
    load_artifact,
    load_audio,
    load_manifest,
    parse_manifest_line,
    persist_artifact,
    sample_frames,
)
from advisum.bos import EnrichedTranscript, TranscriptSegment
from advisum.errors import (
    ContractError,
    DecodeError,
    MalformedManifestError,
    PersistenceError,
    ValidationError,
)


def record(**kw):
    base = {"id": "v1", "source_uri": "synthetic:x", "domain": "Finance", "tone": "Energetic",
            "duration_s": 1800}
    base.update(kw)
    return json.dumps(base)


class TestManifest:
    def test_accepts_valid_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(record() + "\n")
        [a] = load_manifest(p)
        assert (a.domain.value, a.tone.value, a.duration_s) == ("Finance", "Energetic", 1800.0)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("")
        assert load_manifest(p) == []

    def test_duration_cap(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(record(duration_s=2401) + "\n")
        with pytest.raises(ValidationError, match="2400"):
            load_manifest(p)

    def test_duration_at_cap_accepted(self):
        assert parse_manifest_line(record(duration_s=2400), 1).duration_s == 2400.0

    def test_malformed_names_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(record() + "\n\n{not json\n")
        with pytest.raises(MalformedManifestError) as ei:
            load_manifest(p)
        assert ei.value.line == 3

    def test_unknown_enum(self):
        with pytest.raises(MalformedManifestError, match="domain"):
            parse_manifest_line(record(domain="Sports"), 4)

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(record() + "\n" + record() + "\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_manifest(p)

    def test_unknown_field(self):
        with pytest.raises(MalformedManifestError, match="unknown"):
            parse_manifest_line(json.dumps({**json.loads(record()), "lang": "en"}), 1)

    def test_unsafe_id(self):
        with pytest.raises(ValidationError):
            VideoAsset("../x", "synthetic:x", "Finance", "Neutral", 3)

    @settings(max_examples=50, deadline=None)
    @given(st.one_of(st.text(max_size=40), st.dictionaries(st.text(max_size=5), st.integers(), max_size=4)
                     .map(json.dumps)))
    def test_total_validation(self, line):
        # every line yields an asset or a located error; nothing else escapes
        try:
            parse_manifest_line(line, 9)
        except MalformedManifestError as e:
            assert e.line == 9


def synth(duration, seed=1):
    return VideoAsset("s", f"synthetic:clip?seed={seed}", "Finance", "Neutral", duration)


class TestSampleFrames:
    def test_ten_second_clip(self):
        seq = sample_frames(synth(10), 1)
        assert seq.timestamps == [float(k) for k in range(10)]

    def test_zero_fps(self):
        with pytest.raises(ContractError):
            sample_frames(synth(10), 0)

    def test_container_matches_frame_count_probe(self, tmp_path):
        import cv2

        path = tmp_path / "clip.avi"
        native, n = 10.0, 20
        w = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), native, (32, 24))
        for i in range(n):
            img = np.zeros((24, 32, 3), np.uint8)
            img[:, : i + 1] = 200
            w.write(img)
        w.release()
        cap = cv2.VideoCapture(str(path))
        probe_frames, probe_fps = cap.get(cv2.CAP_PROP_FRAME_COUNT), cap.get(cv2.CAP_PROP_FPS)
        cap.release()
        asset = VideoAsset("c", "clip.avi", "Finance", "Neutral", 2.0)
        seq = sample_frames(asset, 5, tmp_path)
        expected = int(round(probe_frames / probe_fps * 5))
        assert len(seq) == expected == 10
        np.testing.assert_allclose(np.diff(seq.timestamps), 0.2)
        # sample k shows decoded frame 2k: bright columns grow by 2 per sample
        widths = [int((im[12, :, 0] > 100).sum()) for im in seq.images]
        assert widths == [2 * k + 1 for k in range(10)]

    def test_missing_media(self, tmp_path):
        with pytest.raises(DecodeError):
            sample_frames(VideoAsset("c", "nope.avi", "Finance", "Neutral", 2.0), 1, tmp_path)

    def test_sequence_invariants(self):
        img = np.zeros((4, 4, 3), np.uint8)
        with pytest.raises(ValidationError):
            FrameSequence("x", [0.0, 0.0], [img, img], 1.0)
        with pytest.raises(ValidationError):
            FrameSequence("x", [0.0, 1.0], [img, np.zeros((5, 4, 3), np.uint8)], 1.0)


class TestAudio:
    def test_sidecar_wav(self, tmp_path):
        samples = (np.sin(np.arange(8000) / 10) * 1000).astype(np.int16)
        with wave.open(str(tmp_path / "clip.wav"), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(samples.tobytes())
        track = load_audio(VideoAsset("c", "clip.avi", "Finance", "Neutral", 0.5), tmp_path)
        np.testing.assert_array_equal(track.samples, samples)

    def test_resampled_stereo(self, tmp_path):
        x = (np.sin(np.arange(8000) / 7) * 3000).astype(np.int16)
        with wave.open(str(tmp_path / "clip.wav"), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(8000)
            w.writeframes(np.repeat(x, 2).tobytes())
        track = load_audio(VideoAsset("c", "clip.avi", "Finance", "Neutral", 1.0), tmp_path)
        assert track.sample_rate_hz == 16000 and track.samples.size == 16000

    def test_no_sidecar(self, tmp_path):
        with pytest.raises(DecodeError):
            load_audio(VideoAsset("c", "clip.avi", "Finance", "Neutral", 1.0), tmp_path)


class TestPersistence:
    def test_transcript_round_trip(self, tmp_path):
        tr = EnrichedTranscript([TranscriptSegment("S1", 0.0, 1.5, "hello there"),
                                 TranscriptSegment("S2", 1.5, 3.0, "hi")])
        persist_artifact(tmp_path, "bos", "a.transcript", tr)
        assert EnrichedTranscript.from_dict(load_artifact(tmp_path, "bos", "a.transcript")) == tr

    def test_frames_and_audio_round_trip(self, tmp_path):
        seq = sample_frames(synth(3), 2)
        audio = load_audio(synth(0.25))
        persist_artifact(tmp_path, "ingest", "s", seq)
        persist_artifact(tmp_path, "ingest", "s", audio)
        assert load_artifact(tmp_path, "ingest", "s", "frames") == seq
        assert load_artifact(tmp_path, "ingest", "s", "audio") == AudioTrack("s", audio.samples)

    def test_npz_round_trip(self, tmp_path):
        arr = {"w": np.arange(6.0).reshape(2, 3)}
        persist_artifact(tmp_path, "train-dpo", "snap", arr)
        np.testing.assert_array_equal(load_artifact(tmp_path, "train-dpo", "snap", "npz")["w"], arr["w"])

    def test_rewrite_is_byte_identical(self, tmp_path):
        seq = sample_frames(synth(2), 2)
        h1 = persist_artifact(tmp_path, "ingest", "s", seq)
        b1 = artifact_path(tmp_path, "ingest", "s", "frames").read_bytes()
        h2 = persist_artifact(tmp_path, "ingest", "s", seq)
        assert h1.digest == h2.digest
        assert artifact_path(tmp_path, "ingest", "s", "frames").read_bytes() == b1

    def test_unwritable_target(self, tmp_path):
        blocker = tmp_path / "run"
        blocker.write_text("a file where the run dir should be")
        with pytest.raises(PersistenceError) as ei:
            persist_artifact(blocker, "bos", "x", {"a": 1})
        assert ei.value.path is not None

    def test_canonical_json_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    @settings(max_examples=40, deadline=None)
    @given(st.recursive(st.none() | st.booleans() | st.integers() | st.text(max_size=8)
                        | st.floats(allow_nan=False, allow_infinity=False),
                        lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=4), c, max_size=3),
                        max_leaves=10))
    def test_json_round_trip(self, tmp_path_factory, value):
        d = tmp_path_factory.mktemp("rt")
        persist_artifact(d, "evaluate", "x", value)
        assert load_artifact(d, "evaluate", "x") == value
