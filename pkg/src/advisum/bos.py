"""BOS features: frame captions + OCR text and the speaker-attributed transcript.

Everything here except the two backend calls is pure; the prompt is a
deterministic function of its inputs and ``TEMPLATE_VERSION``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import AdvisumError, BackendError, ContractError, ValidationError
from .textnorm import normalize_ws

TEMPLATE_VERSION = "bos-v1"
FUSION_SEPARATOR = " | "
NO_CAPTION = "[no caption]"
UNKNOWN_SPEAKER = "SPEAKER_UNK"
NO_VISUALS = "No salient visual content was detected in this video."


class DegradedOutputWarning(UserWarning):
    pass


class FusedText(str):
    """Marker type for fused descriptions; refusing to fuse these twice."""


@dataclass(frozen=True)
class FrameDescription:
    frame_index: int
    ocr_text: str
    caption: str
    fused: str
    timestamp_s: float | None = None
    ocr_failed: bool = False

    def __post_init__(self):
        if self.caption not in self.fused:
            raise ValidationError("fused description must contain the caption")
        if self.ocr_text and self.ocr_text not in self.fused:
            raise ValidationError("fused description must contain the OCR text")

    def to_dict(self) -> dict:
        return {"frame_index": self.frame_index, "ocr_text": self.ocr_text,
                "caption": self.caption, "fused": str(self.fused),
                "timestamp_s": self.timestamp_s, "ocr_failed": self.ocr_failed}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameDescription":
        return cls(d["frame_index"], d["ocr_text"], d["caption"], FusedText(d["fused"]),
                   d.get("timestamp_s"), d.get("ocr_failed", False))


@dataclass(frozen=True)
class SpeakerSegment:
    speaker_label: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValidationError(
                f"speaker segment needs start < end, got [{self.start_s}, {self.end_s}]")


@dataclass(frozen=True)
class Word:
    token: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s > self.end_s:
            raise ValidationError(f"word {self.token!r} ends before it starts")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass
class WordTimeline:
    words: list[Word] = field(default_factory=list)

    def __post_init__(self):
        self.words = [w if isinstance(w, Word) else Word(*w) for w in self.words]
        if any(b.start_s < a.start_s for a, b in zip(self.words, self.words[1:])):
            raise ValidationError("word timeline must be sorted by start time")

    def __len__(self):
        return len(self.words)

    def tokens(self) -> list[str]:
        return [w.token for w in self.words]


@dataclass(frozen=True)
class TranscriptSegment:
    speaker_label: str
    start_s: float
    end_s: float
    text: str

    def to_dict(self) -> dict:
        return {"speaker": self.speaker_label, "start_s": self.start_s,
                "end_s": self.end_s, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptSegment":
        return cls(d["speaker"], d["start_s"], d["end_s"], d["text"])


@dataclass
class EnrichedTranscript:
    segments: list[TranscriptSegment] = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def to_dict(self) -> list[dict]:
        return [s.to_dict() for s in self.segments]

    @classmethod
    def from_dict(cls, rows: list[dict]) -> "EnrichedTranscript":
        return cls([TranscriptSegment.from_dict(r) for r in rows])

    def text(self) -> str:
        return " ".join(s.text for s in self.segments)


@dataclass(frozen=True)
class BOSPrompt:
    asset_id: str
    rendered: str
    sections: dict
    template_version: str = TEMPLATE_VERSION

    def to_dict(self) -> dict:
        return {"asset_id": self.asset_id, "rendered": self.rendered,
                "sections": dict(self.sections), "template_version": self.template_version}

    @classmethod
    def from_dict(cls, d: dict) -> "BOSPrompt":
        return cls(d["asset_id"], d["rendered"], d["sections"], d["template_version"])


def ocr_frame(frame: np.ndarray, backend, frame_index: int | None = None) -> str:
    """Run OCR on one frame and whitespace-normalize the result.

    Raises:
        BackendError: the backend failed. Callers in the pipeline record the
            frame as ocr-failed and continue with empty text.
    """
    try:
        text = backend.extract(frame)
    except AdvisumError:
        raise
    except Exception as e:
        raise BackendError(f"OCR backend failed: {e!r}", frame_index) from e
    return normalize_ws(text or "")


def caption_frame(frame: np.ndarray, backend, frame_index: int | None = None) -> str:
    try:
        text = backend.caption(frame)
    except BackendError as e:
        if e.frame_index is None and frame_index is not None:
            raise BackendError(str(e), frame_index) from e
        raise
    except Exception as e:
        raise BackendError(f"caption backend failed: {e!r}", frame_index) from e
    text = normalize_ws(text or "")
    if not text:
        warnings.warn(f"empty caption for frame {frame_index}; using placeholder",
                      DegradedOutputWarning, stacklevel=2)
        return NO_CAPTION
    return text


def fuse_description(ocr_text: str, caption: str) -> FusedText:
    if isinstance(caption, FusedText) or isinstance(ocr_text, FusedText):
        raise ContractError("refusing to fuse an already fused description")
    if not caption:
        raise ContractError("caption must be non-empty")
    if ocr_text:
        return FusedText(f"{caption}{FUSION_SEPARATOR}On-screen text: {ocr_text}")
    return FusedText(caption)


def describe_frame(frame, frame_index: int, ocr_backend, caption_backend,
                   timestamp_s: float | None = None) -> FrameDescription:
    """OCR + caption + fusion for one keyframe; OCR failures degrade to ""."""
    failed = False
    try:
        ocr = ocr_frame(frame, ocr_backend, frame_index)
    except BackendError as e:
        warnings.warn(str(e), DegradedOutputWarning, stacklevel=2)
        ocr, failed = "", True
    cap = caption_frame(frame, caption_backend, frame_index)
    return FrameDescription(frame_index, ocr, cap, fuse_description(ocr, cap), timestamp_s, failed)


def assign_speakers(words: WordTimeline, diarization: list[SpeakerSegment]) -> list[int]:
    """Segment index per word by the midpoint rule (see :func:`merge_speaker_transcript`)."""
    if not words.words:
        return []
    mids = np.array([w.midpoint for w in words.words])
    starts = np.array([s.start_s for s in diarization])
    ends = np.array([s.end_s for s in diarization])
    return kernels.assign_midpoints(mids, starts, ends).tolist()


def merge_speaker_transcript(words: WordTimeline,
                             diarization: list[SpeakerSegment]) -> EnrichedTranscript:
    """Attribute every word to a speaker and merge same-speaker runs.

    A word belongs to the segment whose closed interval contains its temporal
    midpoint; when segments share a boundary the earlier one wins. Midpoints
    outside every segment go to the nearest segment (distance from the
    midpoint to the interval), earliest on ties. No word is dropped.

    Raises:
        ContractError: either input is not sorted by start time.
    """
    if not isinstance(words, WordTimeline):
        words = WordTimeline(list(words))
    if any(b.start_s < a.start_s for a, b in zip(diarization, diarization[1:])):
        raise ContractError("diarization segments must be sorted by start_s")
    if not words.words:
        return EnrichedTranscript([])
    if not diarization:
        labels = [UNKNOWN_SPEAKER] * len(words)
    else:
        labels = [diarization[i].speaker_label for i in assign_speakers(words, diarization)]
    segments: list[TranscriptSegment] = []
    run: list[Word] = []
    run_label = labels[0]
    for w, lab in zip(words.words, labels):
        if lab != run_label and run:
            segments.append(_segment(run_label, run))
            run = []
        run_label = lab
        run.append(w)
    segments.append(_segment(run_label, run))
    return EnrichedTranscript(segments)


def _segment(label: str, run: list[Word]) -> TranscriptSegment:
    return TranscriptSegment(label, run[0].start_s, max(w.end_s for w in run),
                             " ".join(normalize_ws(w.token) for w in run))


def _clock(t: float) -> str:
    m, s = divmod(t, 60.0)
    return f"{int(m):02d}:{s:05.2f}"


def render_instructions(max_summary_len: int) -> str:
    return (
        "You are summarising a financial advisory video for retail investors.\n"
        "Use the frame descriptions (visual captions and on-screen text) and the\n"
        "speaker-attributed transcript below. Write one concise summary of at most\n"
        f"{max_summary_len} tokens. Keep who-said-what straight, and only state figures,\n"
        "percentages and names that appear in the material."
    )


def render_descriptions(descriptions: list[FrameDescription]) -> str:
    if not descriptions:
        return NO_VISUALS
    lines = []
    for n, d in enumerate(descriptions, 1):
        when = f"t={d.timestamp_s:.2f}s" if d.timestamp_s is not None else f"frame {d.frame_index}"
        lines.append(f"[{n}] ({when}) {d.fused}")
    return "\n".join(lines)


def render_transcript(transcript: EnrichedTranscript) -> str:
    return "\n".join(
        f"[{_clock(s.start_s)}-{_clock(s.end_s)}] {s.speaker_label}: {s.text}"
        for s in transcript.segments)


def build_bos_prompt(descriptions: list[FrameDescription], transcript: EnrichedTranscript,
                     max_summary_len: int = 250, asset_id: str = "") -> BOSPrompt:
    """Render the generation prompt: instructions, frame descriptions, transcript.

    Raises:
        ContractError: empty transcript or non-positive length budget.
    """
    if not transcript.segments:
        raise ContractError("cannot build a prompt from an empty transcript")
    if isinstance(max_summary_len, bool) or int(max_summary_len) != max_summary_len or max_summary_len < 1:
        raise ContractError("max_summary_len must be a positive integer")
    sections = {
        "instructions": render_instructions(int(max_summary_len)),
        "frame_descriptions": render_descriptions(list(descriptions)),
        "transcript": render_transcript(transcript),
    }
    rendered = (
        f"### Instructions\n{sections['instructions']}\n\n"
        f"### Frame descriptions\n{sections['frame_descriptions']}\n\n"
        f"### Transcript\n{sections['transcript']}\n"
    )
    return BOSPrompt(asset_id, rendered, sections)
