"""Stage orchestration over a run directory.

Stages run in the order ``ingest -> frames -> bos -> generate -> train-dpo ->
rank -> evaluate -> report``. Each writes ``<run>/<stage>/_stage.json``
recording its config hash (the relevant config slice plus the hashes of
the upstream stages it reads) and per-asset status. A stage is skipped when
that record matches; a mismatching record is stale and needs ``force``.

Wall-clock timings are returned in :class:`StageReport` and logged, never
written into the run directory, so two runs with one seed are
byte-identical.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bos as bos_mod
from . import metrics
from .assets import (
    Stage,
    VideoAsset,
    artifact_path,
    atomic_write,
    canonical_json,
    dump_manifest,
    load_artifact,
    load_audio,
    load_manifest,
    persist_artifact,
    sample_frames,
)
from .config import RunConfig, digest
from .errors import ContractError, DependencyError, StaleCacheError, ValidationError
from .keyframes import KeyframeSet, select_keyframes
from .preference import (
    CandidateRanking,
    CandidateSet,
    CategoricalLM,
    GenerationConfig,
    OptimizerConfig,
    PolicySnapshot,
    PreferencePair,
    curriculum_pairs,
    fact_consistency_score,
    generate_candidates,
    pick_summary,
    rank_candidates,
    run_curriculum,
)
from .ranker import (
    RankerConfig,
    RankerItem,
    RankerModel,
    TrainConfig,
    load_checkpoint,
    rank_frames,
    save_checkpoint,
    train_ranker,
)
from .textnorm import tokenize

log = logging.getLogger(__name__)

STAGES = [s.value for s in Stage]

# upstream stages each stage reads from
DEPENDS = {
    "ingest": [],
    "frames": ["ingest"],
    "bos": ["ingest", "frames"],
    "generate": ["bos"],
    "train-dpo": ["generate"],
    "rank": ["ingest", "frames", "bos", "train-dpo"],
    "evaluate": ["ingest", "bos", "train-dpo", "rank"],
    "report": ["ingest", "train-dpo", "rank"],
}

CONFIG_KEYS = {
    "ingest": ["hyper.fps"],
    "frames": ["hyper.m", "backends.flow"],
    "bos": ["hyper.l", "backends.ocr", "backends.caption", "backends.asr",
            "backends.diarization", "template_version"],
    "generate": ["seed", "hyper.candidates", "hyper.temperature", "hyper.l", "hyper.fact_gate",
                 "backends.generator", "backends.judge"],
    "train-dpo": ["seed", "hyper.beta", "hyper.stages", "dpo"],
    "rank": ["seed", "hyper.k", "hyper.lambda", "ranker", "backends.image-embedder",
             "backends.text-embedder"],
    "evaluate": ["backends.text-embedder"],
    "report": ["hyper.k"],
}

STAGE_FILE = "_stage.json"

_STOPWORDS = set("""a an and are as at be been but by for from has have he her his i in is it its
of on or our she so that the their them there these they this to was we were what when which who
will with you your about into than then over under more most very can could would should also
just not no yes do does did""".split())


@dataclass
class StageReport:
    stage: str
    config_hash: str
    status: dict = field(default_factory=dict)
    cached: bool = False
    wall_time_s: float = 0.0
    asset_times_s: dict = field(default_factory=dict)

    def persisted(self) -> dict:
        return {"stage": self.stage, "config_hash": self.config_hash,
                "assets": dict(sorted(self.status.items()))}


@dataclass
class SummaryBundle:
    asset_id: str
    summary: str
    frames: list[dict]
    k: int
    clamped: bool

    def to_dict(self) -> dict:
        return {"asset_id": self.asset_id, "summary": self.summary, "frames": self.frames,
                "k": self.k, "clamped": self.clamped}


# ---------------------------------------------------------------------------
# bookkeeping


def _stage_record(run_dir: Path, stage: str) -> dict | None:
    p = run_dir / stage / STAGE_FILE
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


def stage_hash(stage: str, config: RunConfig, run_dir: Path, extra=None) -> str:
    upstream = {}
    for dep in DEPENDS[stage]:
        rec = _stage_record(run_dir, dep)
        upstream[dep] = rec["config_hash"] if rec else None
    return config.subset_hash(CONFIG_KEYS[stage], {"upstream": upstream, "extra": extra})


def check_dependencies(stage: str, run_dir: Path) -> None:
    for dep in STAGES[: STAGES.index(stage)]:
        if dep in DEPENDS[stage] and _stage_record(run_dir, dep) is None:
            raise DependencyError(f"stage '{stage}' needs '{dep}' output; run `{dep}` first", dep)


def run_assets(run_dir: Path) -> list[VideoAsset]:
    p = run_dir / "ingest" / "manifest.jsonl"
    if not p.exists():
        raise DependencyError("no ingested manifest; run `ingest` first", "ingest")
    return load_manifest(p)


def _require(run_dir, stage, name, kind="json"):
    try:
        return load_artifact(run_dir, stage, name, kind)
    except FileNotFoundError:
        raise DependencyError(f"missing {stage} output for {name}; run `{stage}` first", stage) from None


def _map_assets(fn, assets, jobs: int):
    """Apply ``fn`` per asset, possibly in a thread pool; returns {id: (status, seconds)}."""

    def timed(a):
        t0 = time.perf_counter()
        fn(a)
        return a.id, time.perf_counter() - t0

    if jobs > 1 and len(assets) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(timed, assets))
    else:
        results = [timed(a) for a in assets]
    return dict(results)


# ---------------------------------------------------------------------------
# stages


def _ingest(run_dir: Path, config: RunConfig, manifest, jobs: int):
    if manifest is None:
        raise ContractError("ingest needs --manifest")
    manifest = Path(manifest)
    assets = load_manifest(manifest)
    base = manifest.resolve().parent
    fps = float(config.hyper["fps"])

    def one(a: VideoAsset):
        persist_artifact(run_dir, "ingest", a.id, a)
        persist_artifact(run_dir, "ingest", a.id, sample_frames(a, fps, base))
        persist_artifact(run_dir, "ingest", a.id, load_audio(a, base))

    times = _map_assets(one, assets, jobs)
    dump_manifest(assets, run_dir / "ingest" / "manifest.jsonl")
    return assets, times


def _frames(run_dir, config, assets, jobs):
    estimator = config.backend("flow")
    m = int(config.hyper["m"])

    def one(a):
        seq = _require(run_dir, "ingest", a.id, "frames")
        persist_artifact(run_dir, "frames", a.id, select_keyframes(seq, m, estimator))

    return _map_assets(one, assets, jobs)


def _bos(run_dir, config, assets, jobs):
    ocr, cap = config.backend("ocr"), config.backend("caption")
    asr, diar = config.backend("asr"), config.backend("diarization")
    l = int(config.hyper["l"])

    def one(a):
        seq = _require(run_dir, "ingest", a.id, "frames")
        keys = KeyframeSet.from_dict(_require(run_dir, "frames", a.id))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", bos_mod.DegradedOutputWarning)
            descs = [bos_mod.describe_frame(seq.images[s.frame_index], s.frame_index, ocr, cap, s.timestamp_s)
                     for s in keys.selected]
        audio = _require(run_dir, "ingest", a.id, "audio")
        words = asr.transcribe(audio)
        segments = diar.diarize(audio)
        transcript = bos_mod.merge_speaker_transcript(words, segments)
        prompt = bos_mod.build_bos_prompt(descs, transcript, l, a.id)
        persist_artifact(run_dir, "bos", f"{a.id}.words",
                         [{"token": w.token, "start_s": w.start_s, "end_s": w.end_s} for w in words.words])
        persist_artifact(run_dir, "bos", f"{a.id}.diarization",
                         [{"speaker": s.speaker_label, "start_s": s.start_s, "end_s": s.end_s} for s in segments])
        persist_artifact(run_dir, "bos", f"{a.id}.descriptions", [d.to_dict() for d in descs])
        persist_artifact(run_dir, "bos", f"{a.id}.transcript", transcript)
        persist_artifact(run_dir, "bos", a.id, prompt)
        atomic_write(run_dir / "bos" / f"{a.id}.prompt.txt", prompt.rendered.encode("utf-8"))

    return _map_assets(one, assets, jobs)


def _generate(run_dir, config, assets, jobs):
    gen, judge = config.backend("generator"), config.backend("judge")
    k = int(config.hyper["candidates"])
    gate = config.hyper.get("fact_gate")

    def one(a):
        prompt = bos_mod.BOSPrompt.from_dict(_require(run_dir, "bos", a.id))
        gcfg = GenerationConfig(float(config.hyper["temperature"]), config.derived_seed("generate", a.id),
                                int(config.hyper["l"]))
        cands = generate_candidates(prompt, k, gen, gcfg)
        ranking = rank_candidates(prompt, cands, judge, config.backends["judge"])
        facts = [fact_consistency_score(c, prompt) for c in cands.candidates]
        pairs = curriculum_pairs(ranking, cands)
        if gate is not None:
            pairs = [p for p in pairs if fact_consistency_score(p.chosen, prompt) >= float(gate)]
        persist_artifact(run_dir, "generate", f"{a.id}.candidates", cands)
        persist_artifact(run_dir, "generate", f"{a.id}.ranking", {**ranking.to_dict(), "fact_scores": facts})
        persist_artifact(run_dir, "generate", f"{a.id}.pairs", [p.to_dict() for p in pairs])

    return _map_assets(one, assets, jobs)


def _policy_model(config: RunConfig) -> CategoricalLM:
    return CategoricalLM(int(config.dpo["vocab_size"]), int(config.dpo["order"]))


def _train_dpo(run_dir, config, assets, jobs):
    t0 = time.perf_counter()
    model = _policy_model(config)
    pairs = []
    for a in assets:
        pairs.extend(PreferencePair.from_dict(p) for p in _require(run_dir, "generate", f"{a.id}.pairs"))
    seed = config.derived_seed("train-dpo")
    initial = PolicySnapshot(0, model.init_params(seed))
    opt = OptimizerConfig(float(config.dpo["lr"]), int(config.dpo["epochs"]),
                          int(config.dpo["batch_size"]), seed)
    snaps = run_curriculum(initial, pairs, int(config.hyper["stages"]), float(config.hyper["beta"]), opt, model)
    for s in snaps:
        persist_artifact(run_dir, "train-dpo", f"snapshots/iter-{s.iteration:03d}", s.to_arrays())
    persist_artifact(run_dir, "train-dpo", "snapshots", [s.index_entry() for s in snaps])
    for a in assets:
        cands = CandidateSet.from_dict(_require(run_dir, "generate", f"{a.id}.candidates"))
        prompt = bos_mod.BOSPrompt.from_dict(_require(run_dir, "bos", a.id))
        idx, text = pick_summary(cands, snaps[-1], snaps[0], model, float(config.hyper["beta"]))
        persist_artifact(run_dir, "train-dpo", a.id, {
            "asset_id": a.id, "summary": text, "candidate_index": idx,
            "policy_iteration": snaps[-1].iteration, "policy_hash": snaps[-1].param_hash,
            "fact_score": fact_consistency_score(text, prompt)})
    dt = time.perf_counter() - t0
    return {a.id: dt / max(1, len(assets)) for a in assets}


def load_snapshots(run_dir) -> list[PolicySnapshot]:
    index = _require(run_dir, "train-dpo", "snapshots")
    out = []
    for e in index:
        arr = load_artifact(run_dir, "train-dpo", f"snapshots/iter-{e['iteration']:03d}", "npz")
        out.append(PolicySnapshot(e["iteration"], arr["parameters"], e["param_hash"], tuple(e["history"])))
    return out


def content_words(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in _STOPWORDS and not re.fullmatch(r"\d+", t) and len(t) > 2}


def weak_labels(descriptions: list[dict], summary: str) -> np.ndarray:
    """1 for keyframes whose fused description shares a content word with the summary."""
    words = content_words(summary)
    return np.array([1.0 if content_words(d["fused"]) & words else 0.0 for d in descriptions])


def _rank_inputs(run_dir, config, a):
    seq = _require(run_dir, "ingest", a.id, "frames")
    keys = KeyframeSet.from_dict(_require(run_dir, "frames", a.id))
    descs = _require(run_dir, "bos", f"{a.id}.descriptions")
    summary = _require(run_dir, "train-dpo", a.id)["summary"]
    return seq, keys, descs, summary


def _rank(run_dir, config, assets, jobs, checkpoint=None):
    img_emb, txt_emb = config.backend("image-embedder"), config.backend("text-embedder")
    rc = config.ranker
    feats = {}
    for a in assets:
        seq, keys, descs, summary = _rank_inputs(run_dir, config, a)
        frames = np.stack([img_emb.embed(seq.images[i]) for i in keys.indices]) if keys.indices else None
        feats[a.id] = (keys, frames, txt_emb.embed_text(summary), weak_labels(descs, summary))
    t0 = time.perf_counter()
    if checkpoint is not None:
        model = load_checkpoint(checkpoint)
        curve = []
    else:
        cfg = RankerConfig(image_dim=img_emb.dim, text_dim=txt_emb.dim, width=int(rc["width"]),
                           layers=int(rc["layers"]), heads=int(rc["heads"]), ffn=int(rc["ffn"]),
                           n_max=int(rc["n_max"]), lam=float(config.hyper["lambda"]))
        seed = config.derived_seed("rank")
        items = [RankerItem(f, t, y) for (_, f, t, y) in feats.values() if f is not None and y.sum() > 0]
        if items:
            res = train_ranker(items, cfg, TrainConfig(int(rc["epochs"]), float(rc["lr"]),
                                                       int(rc["batch_size"]), seed,
                                                       target_loss=rc.get("target_loss")))
            model, curve = res.model, res.curve
        else:
            model, curve = RankerModel.create(cfg, seed), []
    save_checkpoint(model, run_dir / "rank" / "model.npz")
    persist_artifact(run_dir, "rank", "training_curve", {"param_hash": model.param_hash, "curve": curve})
    k = int(config.hyper["k"])
    times = {a.id: (time.perf_counter() - t0) / max(1, len(assets)) for a in assets}
    for a in assets:
        keys, frames, text, labels = feats[a.id]
        if frames is None:
            ranked_rows, scores, clamped = [], [], k > 0
        else:
            ranked = rank_frames(frames, text, model, k)
            sel = keys.selected
            ranked_rows = [{"frame_index": sel[i].frame_index, "timestamp_s": sel[i].timestamp_s,
                            "score": ranked.scores[i]} for i in ranked.selected]
            scores, clamped = list(ranked.scores), ranked.clamped
        persist_artifact(run_dir, "rank", a.id, {
            "asset_id": a.id, "k": k, "clamped": clamped, "selected": ranked_rows,
            "candidates": [{"frame_index": s.frame_index, "timestamp_s": s.timestamp_s, "score": sc,
                            "weak_label": int(lab)}
                           for s, sc, lab in zip(keys.selected, scores, labels)],
            "model_hash": model.param_hash})
    return times


def load_refs(path) -> dict[str, dict]:
    """JSON Lines of ``{"id", "summary", "gold_frames"?, "votes"?}``."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"refs line {lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(rec, dict) or "id" not in rec:
            raise ValidationError(f"refs line {lineno}: record needs an 'id'")
        out[rec["id"]] = rec
    return out


def _evaluate(run_dir, config, assets, jobs, refs=None):
    refs_map = load_refs(refs) if refs else {}
    embedder = config.backend("text-embedder")
    rows = {}
    for a in assets:
        summary = _require(run_dir, "train-dpo", a.id)["summary"]
        prompt = bos_mod.BOSPrompt.from_dict(_require(run_dir, "bos", a.id))
        ranked = _require(run_dir, "rank", a.id)
        row = {"asset_id": a.id, "fact_consistency": fact_consistency_score(summary, prompt)}
        ref = refs_map.get(a.id)
        if ref and ref.get("summary"):
            row["text"] = {m: s.to_dict() for m, s in
                           metrics.text_scores(summary, ref["summary"], embedder).items()}
        if ref and "gold_frames" in ref:
            seq = _require(run_dir, "ingest", a.id, "frames")
            sel = [r["frame_index"] for r in ranked["selected"]]
            gold = [int(g) for g in ref["gold_frames"]]
            if any(g < 0 or g >= len(seq) for g in gold):
                raise ValidationError(f"gold frame index out of range for {a.id}")
            row["frames"] = metrics.frame_selection_score(
                [seq.images[i] for i in sel], [seq.images[i] for i in gold], sel, gold).to_dict()
        if ref and ref.get("votes"):
            row["tie_discounted_accuracy"] = metrics.tie_discounted_accuracy(ref["votes"])
        rows[a.id] = row
        persist_artifact(run_dir, "evaluate", a.id, row)
    aggregate = _aggregate(list(rows.values()))
    persist_artifact(run_dir, "evaluate", "report", {"assets": sorted(rows), "aggregate": aggregate})
    atomic_write(run_dir / "evaluate" / "report.txt", format_report(rows, aggregate).encode("utf-8"))
    return {a.id: 0.0 for a in assets}


def _flat_scores(row: dict) -> dict[str, float]:
    out = {"fact": row["fact_consistency"]}
    for m, s in row.get("text", {}).items():
        out[m] = s["value"]
    for m, v in row.get("frames", {}).items():
        out[f"frame-{m}"] = v
    if "tie_discounted_accuracy" in row:
        out["tda"] = row["tie_discounted_accuracy"]
    return out


def _aggregate(rows: list[dict]) -> dict[str, float]:
    cols: dict[str, list[float]] = {}
    for r in rows:
        for k, v in _flat_scores(r).items():
            if v is not None and np.isfinite(v):
                cols.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in sorted(cols.items())}


def format_report(rows: dict, aggregate: dict) -> str:
    cols = list(aggregate)
    lines = ["\t".join(["asset"] + cols)]
    for aid in sorted(rows):
        flat = _flat_scores(rows[aid])
        lines.append("\t".join([aid] + [f"{flat[c]:.4f}" if c in flat else "-" for c in cols]))
    lines.append("\t".join(["MEAN"] + [f"{aggregate[c]:.4f}" for c in cols]))
    return "\n".join(lines) + "\n"


def assemble_summary_bundle(asset_id: str, run_dir) -> SummaryBundle:
    """Final-policy summary paired with its ranked frames (score + timestamp each).

    Raises:
        DependencyError: the train-dpo or rank output for the asset is missing.
    """
    run_dir = Path(run_dir)
    summary = _require(run_dir, "train-dpo", asset_id)
    ranked = _require(run_dir, "rank", asset_id)
    path = artifact_path(run_dir, "ingest", asset_id, "frames")
    if not path.exists():
        raise DependencyError(f"missing ingest output for {asset_id}; run `ingest` first", "ingest")
    frames_index = json.loads(path.read_text(encoding="utf-8"))
    files = {e["index"]: e["file"] for e in frames_index["frames"]}
    frames = [{"frame_index": r["frame_index"], "timestamp_s": r["timestamp_s"], "score": r["score"],
               "file": f"ingest/{files[r['frame_index']]}"} for r in ranked["selected"]]
    return SummaryBundle(asset_id, summary["summary"], frames, ranked["k"], ranked["clamped"])


def _report(run_dir, config, assets, jobs):
    for a in assets:
        persist_artifact(run_dir, "report", a.id, assemble_summary_bundle(a.id, run_dir))
    persist_artifact(run_dir, "report", "index", {"assets": [a.id for a in assets],
                                                  "config_hash": config.hash})
    return {a.id: 0.0 for a in assets}


# ---------------------------------------------------------------------------


def run_stage(stage: str, config: RunConfig, run_dir, *, manifest=None, refs=None, checkpoint=None,
              force: bool = False, jobs: int = 1) -> StageReport:
    """Run one stage for every asset in the run.

    Raises:
        DependencyError: an upstream stage has not been run.
        StaleCacheError: the stage ran before under a different config and
            ``force`` is not set.
    """
    stage = Stage(stage).value
    run_dir = Path(run_dir)
    check_dependencies(stage, run_dir)
    extra = None
    if stage == "ingest":
        if manifest is None:
            raise ContractError("ingest needs --manifest")
        extra = {"manifest": digest(Path(manifest).read_text(encoding="utf-8"))}
    elif stage == "evaluate" and refs is not None:
        extra = {"refs": digest(Path(refs).read_text(encoding="utf-8"))}
    elif stage == "rank" and checkpoint is not None:
        extra = {"checkpoint": digest(Path(checkpoint).read_bytes().hex())}
    h = stage_hash(stage, config, run_dir, extra)
    rec = _stage_record(run_dir, stage)
    if rec is not None and not force:
        if rec["config_hash"] == h and all(v == "ok" for v in rec["assets"].values()):
            log.info("%s: cache valid, skipping", stage)
            return StageReport(stage, h, dict(rec["assets"]), cached=True)
        if rec["config_hash"] != h:
            raise StaleCacheError(
                f"stage '{stage}' output was produced with a different config; rerun with --force", stage)
    if force and (run_dir / stage).exists():
        shutil.rmtree(run_dir / stage)
    t0 = time.perf_counter()
    if stage == "ingest":
        assets, times = _ingest(run_dir, config, manifest, jobs)
    else:
        assets = run_assets(run_dir)
        fn = {"frames": _frames, "bos": _bos, "generate": _generate, "train-dpo": _train_dpo,
              "evaluate": lambda r, c, a, j: _evaluate(r, c, a, j, refs),
              "rank": lambda r, c, a, j: _rank(r, c, a, j, checkpoint),
              "report": _report}[stage]
        times = fn(run_dir, config, assets, jobs)
    report = StageReport(stage, h, {a.id: "ok" for a in assets}, False, time.perf_counter() - t0, times)
    atomic_write(run_dir / stage / STAGE_FILE, canonical_json(report.persisted()).encode())
    log.info("%s: %d asset(s) in %.2fs", stage, len(assets), report.wall_time_s)
    return report


def run_pipeline(config: RunConfig, run_dir, manifest, refs=None, checkpoint=None,
                 force: bool = False, jobs: int = 1, stages=None) -> list[StageReport]:
    out = []
    for stage in stages or STAGES:
        out.append(run_stage(stage, config, run_dir, manifest=manifest, refs=refs,
                             checkpoint=checkpoint, force=force, jobs=jobs))
    return out
