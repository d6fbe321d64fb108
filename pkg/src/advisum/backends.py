"""Model backends behind small protocols, plus deterministic offline mocks.

A binding string selects the implementation for a role::

    mock                         default mock for the role
    mock:<variant>?key=value     a named mock variant with parameters
    proxy | opencv               built-in flow estimators
    external:<module>:<factory>?key=value
                                 ``factory(**params)`` imported at bind time

External factories read any credentials they need from environment
variables themselves; nothing secret travels through configs.
"""

from __future__ import annotations

import hashlib
import importlib
import re
from typing import Protocol, runtime_checkable
from urllib.parse import parse_qsl

import numpy as np

from .bos import SpeakerSegment, Word, WordTimeline
from .errors import BackendError, ContractError
from .keyframes import FarnebackFlow, ProxyFlow
from .textnorm import tokenize

ROLES = ("flow", "ocr", "caption", "asr", "diarization", "generator", "judge",
         "image-embedder", "text-embedder")

DEFAULT_BINDINGS = {role: ("proxy" if role == "flow" else "mock") for role in ROLES}


@runtime_checkable
class FlowBackend(Protocol):
    def field(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class OcrBackend(Protocol):
    def extract(self, frame: np.ndarray) -> str: ...


@runtime_checkable
class CaptionBackend(Protocol):
    def caption(self, frame: np.ndarray) -> str: ...


@runtime_checkable
class AsrBackend(Protocol):
    def transcribe(self, audio) -> WordTimeline: ...


@runtime_checkable
class DiarizationBackend(Protocol):
    def diarize(self, audio) -> list[SpeakerSegment]: ...


@runtime_checkable
class GeneratorBackend(Protocol):
    def generate(self, prompt: str, *, seed: int, temperature: float, max_len: int) -> str: ...


@runtime_checkable
class JudgeBackend(Protocol):
    def score(self, prompt: str, candidates: list[str]) -> list[float | None]: ...


@runtime_checkable
class ImageEmbedder(Protocol):
    dim: int

    def embed(self, frame: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class TextEmbedder(Protocol):
    dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_tokens(self, tokens: list[str]) -> np.ndarray: ...


def stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def frame_digest(frame: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(frame).tobytes()
                          + str(frame.shape).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Mocks

_CAPTION_SUBJECTS = ["a stock chart", "two speakers at a desk", "a presenter in a studio",
                     "a slide with bullet points", "a bar graph of returns", "a city skyline",
                     "a close-up of a smiling host", "a table of interest rates"]
_CAPTION_DETAILS = ["with a blue background", "under bright lighting", "beside a logo",
                    "with rising green bars", "in front of a bookshelf", "with a ticker strip"]
_OCR_SNIPPETS = ["NIFTY 50 +1.2%", "SIP returns 10-12%", "Sensex 72,000", "RBI repo rate 6.5%",
                 "Inflation 5.1%", "Gold ETF", "Mutual Fund SIP", "Emergency fund: 6 months"]
_LEXICON = ("markets investors should keep a long horizon because equity returns compound "
            "over time and a systematic investment plan smooths volatility while diversification "
            "across debt gold and index funds reduces risk the speaker recommends reviewing "
            "expenses building an emergency fund and avoiding leverage interest rates inflation "
            "and tax planning matter too").split()
_NAMED = ["Nifty 50", "Sensex", "RBI", "Warren Buffett", "Mutual Fund", "SEBI"]
_FIGURES = ["10-12%", "6.5%", "5%", "2024", "15 years", "3x"]


class MockOcr:
    """Blank (uniform) frames read as ""; others map to a snippet keyed by frame hash.

    ``text=...`` pins the output; ``fail=1`` makes every call raise.
    """

    def __init__(self, text: str | None = None, fail: str | None = None):
        self.text = text
        self.fail = bool(int(fail)) if fail is not None else False

    def extract(self, frame: np.ndarray) -> str:
        if self.fail:
            raise RuntimeError("mock OCR failure")
        if self.text is not None:
            return self.text
        if frame.min() == frame.max():
            return ""
        return _OCR_SNIPPETS[stable_seed("ocr", frame_digest(frame)) % len(_OCR_SNIPPETS)]


class MockCaption:
    """Caption keyed by frame hash; the hash prefix keeps distinct frames distinct.

    ``fail=timeout`` raises ``TimeoutError``; ``empty=1`` returns "".
    """

    def __init__(self, fail: str | None = None, empty: str | None = None):
        self.fail = fail
        self.empty = bool(int(empty)) if empty is not None else False

    def caption(self, frame: np.ndarray) -> str:
        if self.fail == "timeout":
            raise TimeoutError("mock caption backend timed out")
        if self.fail:
            raise RuntimeError("mock caption failure")
        if self.empty:
            return ""
        d = frame_digest(frame)
        s = stable_seed("caption", d)
        subject = _CAPTION_SUBJECTS[s % len(_CAPTION_SUBJECTS)]
        detail = _CAPTION_DETAILS[(s >> 8) % len(_CAPTION_DETAILS)]
        return f"{subject} {detail} (scene {d[:6]})"


class MockAsr:
    """Pseudo-transcript seeded by the audio content.

    Words of 0.2-0.6 s with short pauses cover the track; about one word in
    twelve is a figure or a named entity so fact scoring has material.
    """

    def __init__(self, words_per_s: str | float | None = None):
        self.rate = float(words_per_s) if words_per_s is not None else 2.0

    def transcribe(self, audio) -> WordTimeline:
        rng = np.random.default_rng(stable_seed("asr", audio.digest()))
        total = audio.duration_s
        words, t = [], float(rng.uniform(0.0, 0.3))
        while t < total:
            dur = float(rng.uniform(0.2, 0.6))
            end = min(t + dur, total)
            r = rng.random()
            if r < 0.04:
                token = _FIGURES[int(rng.integers(len(_FIGURES)))]
            elif r < 0.08:
                token = _NAMED[int(rng.integers(len(_NAMED)))]
            else:
                token = _LEXICON[int(rng.integers(len(_LEXICON)))]
            for i, piece in enumerate(token.split()):
                # multi-word names share the slot evenly
                n = len(token.split())
                s0 = t + (end - t) * i / n
                words.append(Word(piece, round(s0, 3), round(t + (end - t) * (i + 1) / n, 3)))
            t = end + float(rng.uniform(0.02, 1.0 / self.rate))
        return WordTimeline(words)


class MockDiarization:
    """Alternating speaker turns of 2-9 s, occasionally separated by silence."""

    def __init__(self, speakers: str | int | None = None):
        self.speakers = int(speakers) if speakers is not None else 2

    def diarize(self, audio) -> list[SpeakerSegment]:
        rng = np.random.default_rng(stable_seed("diar", audio.digest()))
        total = audio.duration_s
        segs, t, who = [], 0.0, 0
        while t < total:
            end = min(t + float(rng.uniform(2.0, 9.0)), total)
            if end > t:
                segs.append(SpeakerSegment(f"SPEAKER_{who:02d}", round(t, 3), round(end, 3)))
            gap = float(rng.uniform(0.3, 1.5)) if rng.random() < 0.3 else 0.0
            t = end + gap
            who = (who + 1 + int(rng.integers(0, max(1, self.speakers - 1)))) % self.speakers
        return segs


def _prompt_transcript_lines(prompt: str) -> list[str]:
    _, _, body = prompt.partition("### Transcript\n")
    out = []
    for line in body.splitlines():
        m = re.match(r"\[[^\]]*\]\s+[^:]+:\s+(.*)", line)
        if m:
            out.append(m.group(1))
    return out


class MockGenerator:
    """Extractive stand-in for an LLM.

    ``variant=template`` returns ``"summary variant {i}"`` where i is the
    seed offset (``seed - base``); the default variant samples transcript
    lines out of the prompt with an RNG on the seed, temperature widening
    the pool it draws from.
    """

    def __init__(self, variant: str = "extractive", base: str | int = 0):
        self.variant = variant
        self.base = int(base)

    def generate(self, prompt: str, *, seed: int, temperature: float = 0.7, max_len: int = 250) -> str:
        if self.variant == "template":
            return f"summary variant {seed - self.base}"
        lines = _prompt_transcript_lines(prompt)
        if not lines:
            return ""
        rng = np.random.default_rng(stable_seed("gen", seed, prompt))
        pool = max(1, min(len(lines), int(round(2 + temperature * len(lines)))))
        picks = sorted(rng.choice(len(lines), size=min(pool, len(lines)), replace=False)[:4])
        words: list[str] = []
        for i in picks:
            words.extend(lines[i].split())
        return " ".join(words[:max_len])


class MockJudge:
    """Deterministic judge.

    ``variant=length`` scores by character length; ``variant=overlap``
    (default) by the share of candidate tokens present in the prompt,
    minus a small penalty for very short outputs.
    """

    def __init__(self, variant: str = "overlap"):
        self.variant = variant

    def score(self, prompt: str, candidates: list[str]) -> list[float | None]:
        if self.variant == "length":
            return [float(len(c)) for c in candidates]
        if self.variant == "constant":
            return [0.0 for _ in candidates]
        vocab = set(tokenize(prompt))
        out = []
        for c in candidates:
            toks = tokenize(c)
            if not toks:
                out.append(0.0)
                continue
            hit = sum(t in vocab for t in toks) / len(toks)
            out.append(hit - 1.0 / (1 + len(toks)))
        return out


class HashImageEmbedder:
    """Seeded random projection of a downsampled grayscale frame."""

    def __init__(self, dim: str | int = 2048, side: str | int = 16, seed: str | int = 0):
        self.dim = int(dim)
        self.side = int(side)
        rng = np.random.default_rng(stable_seed("img-proj", seed, self.dim, self.side))
        self.proj = rng.standard_normal((self.side * self.side * 3, self.dim)) / self.side

    def embed(self, frame: np.ndarray) -> np.ndarray:
        h, w = frame.shape[:2]
        ys = (np.arange(self.side) * h // self.side)
        xs = (np.arange(self.side) * w // self.side)
        small = frame[np.ix_(ys, xs)].astype(np.float64) / 255.0 - 0.5
        return small.reshape(-1) @ self.proj


class HashTextEmbedder:
    """Every token gets a fixed pseudo-random unit vector; text = mean of tokens."""

    def __init__(self, dim: str | int = 768, seed: str | int = 0):
        self.dim = int(dim)
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vec(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            rng = np.random.default_rng(stable_seed("tok", self.seed, token))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            self._cache[token] = v
        return v

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self._vec(t) for t in tokens])

    def embed_text(self, text: str) -> np.ndarray:
        toks = tokenize(text)
        if not toks:
            return np.zeros(self.dim)
        return self.embed_tokens(toks).mean(axis=0)


class OneHotEmbedder:
    """One-hot token vectors over a vocabulary grown on demand.

    Under cosine matching this makes embedding F1 collapse to unigram F1.
    """

    def __init__(self):
        self.vocab: dict[str, int] = {}

    @property
    def dim(self) -> int:
        return max(1, len(self.vocab))

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        for t in tokens:
            self.vocab.setdefault(t, len(self.vocab))
        out = np.zeros((len(tokens), self.dim))
        for i, t in enumerate(tokens):
            out[i, self.vocab[t]] = 1.0
        return out

    def embed_text(self, text: str) -> np.ndarray:
        e = self.embed_tokens(tokenize(text))
        return e.sum(axis=0) if len(e) else np.zeros(self.dim)


_MOCKS = {
    "flow": {"proxy": ProxyFlow, "opencv": FarnebackFlow},
    "ocr": {"default": MockOcr},
    "caption": {"default": MockCaption},
    "asr": {"default": MockAsr},
    "diarization": {"default": MockDiarization},
    "generator": {"default": MockGenerator},
    "judge": {"default": MockJudge},
    "image-embedder": {"default": HashImageEmbedder},
    "text-embedder": {"default": HashTextEmbedder, "onehot": OneHotEmbedder},
}


def parse_binding(binding: str) -> tuple[str, str, dict]:
    """Split ``scheme:target?query`` into its parts."""
    head, _, query = binding.partition("?")
    scheme, _, target = head.partition(":")
    return scheme, target, dict(parse_qsl(query, keep_blank_values=True))


def make_backend(role: str, binding: str | None = None):
    """Instantiate the backend bound to ``role``.

    Raises:
        ContractError: unknown role or malformed binding.
        BackendError: an external factory cannot be imported or fails.
    """
    if role not in ROLES:
        raise ContractError(f"unknown backend role {role!r}")
    binding = binding or DEFAULT_BINDINGS[role]
    scheme, target, params = parse_binding(binding)
    if role == "flow" and scheme in ("proxy", "opencv"):
        return _MOCKS["flow"][scheme](**_coerce(params))
    if role == "flow" and scheme == "mock":
        return ProxyFlow()
    if scheme == "mock":
        table = _MOCKS[role]
        if target and target in table:
            cls = table[target]
        else:
            cls = table["default"]
            if target:
                params.setdefault("variant", target)
        try:
            return cls(**params)
        except TypeError as e:
            raise ContractError(f"bad parameters for {role} binding {binding!r}: {e}") from None
    if scheme == "external":
        module, _, attr = target.partition(":")
        if not module or not attr:
            raise ContractError(f"external binding must be external:<module>:<factory>, got {binding!r}")
        try:
            factory = getattr(importlib.import_module(module), attr)
            return factory(**params)
        except Exception as e:
            raise BackendError(f"cannot create external {role} backend {binding!r}: {e!r}") from e
    raise ContractError(f"unknown binding scheme {scheme!r} for role {role}")


def _coerce(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out
