"""Dataset manifests, frame/audio sampling and the run-directory store.

Manifests are UTF-8 JSON Lines, one :class:`VideoAsset` per line. Media is
addressed by ``source_uri``:

* a filesystem path to any container OpenCV can decode; audio is read from a
  sidecar ``<stem>.wav`` next to it,
* ``synthetic:<name>[?seed=N&w=W&h=H]`` for procedurally rendered clips used
  by offline runs and tests.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import io
import json
import math
import os
import tempfile
import wave
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any
from urllib.parse import parse_qsl

import numpy as np

from .errors import (
    ContractError,
    DecodeError,
    EmptyAssetError,
    MalformedManifestError,
    PersistenceError,
    ValidationError,
)

MAX_DURATION_S = 2400.0
AUDIO_RATE_HZ = 16_000


class Domain(str, enum.Enum):
    BUSINESS = "Business"
    FINANCE = "Finance"
    INVESTMENT = "Investment"
    ECONOMICS = "Economics"
    MARKETING = "Marketing"


class Tone(str, enum.Enum):
    INFORMATIVE = "Informative"
    NEUTRAL = "Neutral"
    ENERGETIC = "Energetic"
    CAUTIOUS = "Cautious"


class Stage(str, enum.Enum):
    INGEST = "ingest"
    FRAMES = "frames"
    BOS = "bos"
    GENERATE = "generate"
    TRAIN_DPO = "train-dpo"
    RANK = "rank"
    EVALUATE = "evaluate"
    REPORT = "report"


@dataclass(frozen=True)
class VideoAsset:
    id: str
    source_uri: str
    domain: Domain
    tone: Tone
    duration_s: float

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("asset id must be a non-empty string")
        if any(c in self.id for c in "/\\") or self.id.startswith("."):
            raise ValidationError(f"asset id {self.id!r} is not a safe file name")
        try:
            object.__setattr__(self, "domain", Domain(self.domain))
        except ValueError:
            raise ValidationError(f"unknown domain {self.domain!r}") from None
        try:
            object.__setattr__(self, "tone", Tone(self.tone))
        except ValueError:
            raise ValidationError(f"unknown tone {self.tone!r}") from None
        d = self.duration_s
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not math.isfinite(d):
            raise ValidationError(f"duration_s must be a finite number, got {d!r}")
        if d < 0:
            raise ValidationError(f"duration_s must be non-negative, got {d}")
        if d > MAX_DURATION_S:
            raise ValidationError(
                f"duration_s {d} exceeds the {MAX_DURATION_S:g} s cap")
        object.__setattr__(self, "duration_s", float(d))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_uri": self.source_uri,
            "domain": self.domain.value,
            "tone": self.tone.value,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VideoAsset":
        return cls(d["id"], d["source_uri"], d["domain"], d["tone"], d["duration_s"])


DatasetManifest = list[VideoAsset]

_MANIFEST_FIELDS = ("id", "source_uri", "domain", "tone", "duration_s")


def parse_manifest_line(text: str, lineno: int) -> VideoAsset:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedManifestError(f"invalid JSON ({e.msg})", lineno) from None
    if not isinstance(record, dict):
        raise MalformedManifestError("record is not an object", lineno)
    missing = [f for f in _MANIFEST_FIELDS if f not in record]
    if missing:
        raise MalformedManifestError(f"missing field(s) {', '.join(missing)}", lineno)
    extra = sorted(set(record) - set(_MANIFEST_FIELDS))
    if extra:
        raise MalformedManifestError(f"unknown field(s) {', '.join(extra)}", lineno)
    try:
        return VideoAsset.from_dict(record)
    except ValidationError as e:
        raise MalformedManifestError(str(e), lineno) from None


def load_manifest(path) -> DatasetManifest:
    """Read and validate a JSON Lines manifest.

    Blank lines are ignored. Every other line must yield a valid asset;
    the first failure raises with its line number, so nothing is silently
    skipped.

    Raises:
        MalformedManifestError: bad JSON, missing/unknown fields, bad enum
            values or a duration above the cap (``.line`` is 1-based).
        ValidationError: two records share an id.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except UnicodeDecodeError as e:
        raise ValidationError(f"manifest is not UTF-8: {e}") from None
    assets: list[VideoAsset] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        asset = parse_manifest_line(line, lineno)
        if asset.id in seen:
            raise ValidationError(
                f"line {lineno}: duplicate id {asset.id!r} (first seen on line {seen[asset.id]})")
        seen[asset.id] = lineno
        assets.append(asset)
    return assets


def dump_manifest(assets, path) -> None:
    lines = [json.dumps(a.to_dict(), sort_keys=True) for a in assets]
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


@dataclass
class FrameSequence:
    asset_id: str
    timestamps: list[float]
    images: list[np.ndarray]
    sample_rate_fps: float

    def __post_init__(self):
        if len(self.timestamps) != len(self.images):
            raise ValidationError("timestamps and images differ in length")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValidationError("frame timestamps must be strictly increasing")
        if self.images:
            shape = self.images[0].shape
            for im in self.images:
                if im.shape != shape or im.ndim != 3 or im.shape[2] != 3:
                    raise ValidationError("frames must share one HxWx3 shape")
                if im.dtype != np.uint8:
                    raise ValidationError("frames must be 8-bit")
        if not self.sample_rate_fps > 0:
            raise ValidationError("sample_rate_fps must be positive")

    def __len__(self):
        return len(self.images)

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (self.asset_id == other.asset_id
                and self.timestamps == other.timestamps
                and self.sample_rate_fps == other.sample_rate_fps
                and len(self.images) == len(other.images)
                and all(np.array_equal(a, b) for a, b in zip(self.images, other.images)))


@dataclass
class AudioTrack:
    asset_id: str
    samples: np.ndarray  # int16 mono
    sample_rate_hz: int = AUDIO_RATE_HZ

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError("audio must be a non-empty mono sample array")
        if int(self.sample_rate_hz) <= 0:
            raise ValidationError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def digest(self) -> str:
        return hashlib.sha256(self.samples.tobytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, AudioTrack):
            return NotImplemented
        return (self.asset_id == other.asset_id
                and self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.samples, other.samples))


# ---------------------------------------------------------------------------
# Synthetic media


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    seed: int
    width: int = 96
    height: int = 64

    @classmethod
    def parse(cls, uri: str) -> "SyntheticSpec":
        body = uri[len("synthetic:"):]
        name, _, query = body.partition("?")
        params = dict(parse_qsl(query))
        seed = int(params.get("seed", zlib.crc32(name.encode())))
        return cls(name, seed, int(params.get("w", 96)), int(params.get("h", 64)))

    def scene_cuts(self, duration_s: float) -> list[float]:
        rng = np.random.default_rng(self.seed)
        n = max(1, int(duration_s // 6))
        return sorted(float(x) for x in rng.uniform(0.5, max(duration_s, 1.0), size=n))

    def render(self, t: float, duration_s: float) -> np.ndarray:
        """Frame at time ``t``: a slide background that changes at scene cuts
        plus a slowly drifting block."""
        cuts = self.scene_cuts(duration_s)
        scene = sum(1 for c in cuts if c <= t)
        rng = np.random.default_rng([self.seed, scene])
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[:] = rng.integers(20, 235, size=3, dtype=np.uint8)
        # text-like bars
        for _ in range(3):
            y = int(rng.integers(0, self.height - 4))
            x = int(rng.integers(0, self.width // 2))
            img[y:y + 3, x:x + int(rng.integers(8, self.width // 2))] = 255 - img[0, 0]
        size = max(4, self.height // 6)
        x = int((t * 3) % max(1, self.width - size))
        y = self.height // 2
        img[y:y + size, x:x + size] = (250, 250, 250)
        return img

    def audio(self, duration_s: float, rate: int = AUDIO_RATE_HZ) -> np.ndarray:
        n = max(1, int(round(duration_s * rate)))
        t = np.arange(n) / rate
        rng = np.random.default_rng(self.seed)
        f1, f2 = rng.uniform(120, 400, size=2)
        sig = 0.4 * np.sin(2 * np.pi * f1 * t) + 0.2 * np.sin(2 * np.pi * f2 * t)
        return np.round(sig * 32767 * 0.8).astype(np.int16)


def _is_synthetic(uri: str) -> bool:
    return uri.startswith("synthetic:")


def _resolve(uri: str, base: Path | None) -> Path:
    p = Path(uri)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def sample_frames(asset: VideoAsset, fps: float = 1.0, base_dir=None) -> FrameSequence:
    """Sample frames at fixed interval ``1/fps``; frame k has timestamp k/fps.

    For containers the decoded frame shown at time k/fps is used (the last
    frame whose presentation time is <= k/fps).

    Raises:
        ContractError: ``fps`` not positive.
        DecodeError: media unreadable.
        EmptyAssetError: no frames decoded.
    """
    if isinstance(fps, bool) or not isinstance(fps, (int, float)) or not fps > 0 or not math.isfinite(fps):
        raise ContractError(f"fps must be a positive real, got {fps!r}")
    fps = float(fps)
    if _is_synthetic(asset.source_uri):
        spec = SyntheticSpec.parse(asset.source_uri)
        n = math.ceil(asset.duration_s * fps - 1e-9)
        ts = [k / fps for k in range(n)]
        images = [spec.render(t, asset.duration_s) for t in ts]
    else:
        ts, images = _sample_container(_resolve(asset.source_uri, base_dir), fps)
    if not images:
        raise EmptyAssetError(f"no frames decoded from {asset.source_uri}")
    return FrameSequence(asset.id, ts, images, fps)


def _sample_container(path: Path, fps: float):
    import cv2

    if not path.is_file():
        raise DecodeError(f"cannot read media {path}")
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise DecodeError(f"cannot decode media {path}")
        native = cap.get(cv2.CAP_PROP_FPS)
        if not native or native <= 0 or not math.isfinite(native):
            raise DecodeError(f"container reports no frame rate: {path}")
        ts, images = [], []
        k = idx = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            # frame idx is on screen during [idx/native, (idx+1)/native)
            while k / fps < (idx + 1) / native - 1e-9:
                if k / fps >= idx / native - 1e-9:
                    ts.append(k / fps)
                    images.append(np.ascontiguousarray(frame[:, :, ::-1]))
                k += 1
            idx += 1
        return ts, images
    finally:
        cap.release()


def load_audio(asset: VideoAsset, base_dir=None, rate: int = AUDIO_RATE_HZ) -> AudioTrack:
    """Decode the asset's audio to mono 16-bit PCM at ``rate`` Hz."""
    if _is_synthetic(asset.source_uri):
        spec = SyntheticSpec.parse(asset.source_uri)
        return AudioTrack(asset.id, spec.audio(max(asset.duration_s, 1.0 / rate), rate), rate)
    path = _resolve(asset.source_uri, base_dir)
    wav = path if path.suffix.lower() == ".wav" else path.with_suffix(".wav")
    if not wav.is_file():
        raise DecodeError(f"no audio sidecar found for {path} (expected {wav})")
    return AudioTrack(asset.id, *_read_wav(wav, rate))


def _read_wav(path: Path, rate: int):
    try:
        with wave.open(str(path), "rb") as w:
            nch, width, src_rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as e:
        raise DecodeError(f"cannot decode {path}: {e}") from None
    if width == 2 and nch == 1 and src_rate == rate:
        samples = np.frombuffer(raw, "<i2").astype(np.int16)
        if samples.size == 0:
            raise EmptyAssetError(f"no audio samples in {path}")
        return samples, rate
    if width == 1:
        x = (np.frombuffer(raw, np.uint8).astype(np.float64) - 128) / 128
    elif width == 2:
        x = np.frombuffer(raw, "<i2").astype(np.float64) / 32768
    elif width == 4:
        x = np.frombuffer(raw, "<i4").astype(np.float64) / 2**31
    else:
        raise DecodeError(f"unsupported sample width {width} in {path}")
    x = x.reshape(-1, nch).mean(axis=1)
    if x.size == 0:
        raise EmptyAssetError(f"no audio samples in {path}")
    if src_rate != rate:
        from scipy.signal import resample_poly

        g = math.gcd(src_rate, rate)
        x = resample_poly(x, rate // g, src_rate // g)
    return np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16), rate


def _write_wav_bytes(track: AudioTrack) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(track.sample_rate_hz))
        w.writeframes(track.samples.astype("<i2").tobytes())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Run-directory persistence


@dataclass(frozen=True)
class ArtifactHandle:
    path: Path
    kind: str
    digest: str


def canonical_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False) + "\n"


def _plain(obj):
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _png_bytes(img: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img, "RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def persist_artifact(run_dir, stage, asset_id: str, payload) -> ArtifactHandle:
    """Write ``payload`` under ``run_dir/stage/asset_id.<ext>``.

    The extension follows the payload: ``FrameSequence`` becomes a
    ``.frames.json`` index plus PNGs in ``asset_id.frames/``, ``AudioTrack`` a
    ``.wav``, a dict of numpy arrays an ``.npz``, anything else canonical
    ``.json``. Output bytes depend only on the payload, so a rerun rewrites
    identical files.

    Raises:
        PersistenceError: the directory or file cannot be written.
    """
    stage = Stage(stage).value if not isinstance(stage, Stage) else stage.value
    base = Path(run_dir) / stage
    try:
        if isinstance(payload, FrameSequence):
            fdir = base / f"{asset_id}.frames"
            entries = []
            for i, (t, img) in enumerate(zip(payload.timestamps, payload.images)):
                name = f"{i:06d}.png"
                atomic_write(fdir / name, _png_bytes(img))
                entries.append({"index": i, "timestamp_s": t, "file": f"{asset_id}.frames/{name}"})
            index = {"asset_id": payload.asset_id, "sample_rate_fps": payload.sample_rate_fps,
                     "frames": entries}
            path, kind, data = base / f"{asset_id}.frames.json", "frames", canonical_json(index).encode()
        elif isinstance(payload, AudioTrack):
            path, kind, data = base / f"{asset_id}.wav", "audio", _write_wav_bytes(payload)
        elif isinstance(payload, dict) and payload and all(isinstance(v, np.ndarray) for v in payload.values()):
            buf = io.BytesIO()
            np.savez(buf, **{k: payload[k] for k in sorted(payload)})
            path, kind, data = base / f"{asset_id}.npz", "npz", buf.getvalue()
        else:
            path, kind, data = base / f"{asset_id}.json", "json", canonical_json(payload).encode()
        atomic_write(path, data)
    except OSError as e:
        raise PersistenceError(f"cannot write artifact ({e.strerror or e})", getattr(e, "filename", None) or base) from None
    return ArtifactHandle(path, kind, hashlib.sha256(data).hexdigest())


def artifact_path(run_dir, stage, asset_id: str, kind: str = "json") -> Path:
    stage = Stage(stage).value
    ext = {"json": ".json", "frames": ".frames.json", "audio": ".wav", "npz": ".npz"}[kind]
    return Path(run_dir) / stage / f"{asset_id}{ext}"


def load_artifact(run_dir, stage, asset_id: str, kind: str = "json"):
    """Inverse of :func:`persist_artifact` (JSON payloads come back as plain data)."""
    path = artifact_path(run_dir, stage, asset_id, kind)
    if not path.exists():
        raise FileNotFoundError(path)
    if kind == "json":
        return json.loads(path.read_text(encoding="utf-8"))
    if kind == "npz":
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    if kind == "audio":
        samples, rate = _read_wav(path, _wav_rate(path))
        return AudioTrack(asset_id, samples, rate)
    from PIL import Image

    index = json.loads(path.read_text(encoding="utf-8"))
    images = [np.asarray(Image.open(path.parent / e["file"]).convert("RGB")) for e in index["frames"]]
    return FrameSequence(index["asset_id"], [e["timestamp_s"] for e in index["frames"]],
                         images, index["sample_rate_fps"])


def _wav_rate(path: Path) -> int:
    with wave.open(str(path), "rb") as w:
        return w.getframerate()
