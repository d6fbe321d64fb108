"""Candidate generation, judge ranking, curriculum preference pairs and DPO.

The policy trained here is a small categorical language model
(:class:`CategoricalLM`) whose sequence log-probabilities have closed-form
gradients, so the whole chain from loss to parameters can be checked
against finite differences. Each curriculum stage trains against the frozen
snapshot produced by the previous stage.
"""

from __future__ import annotations

import hashlib
import math
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AdvisumError, BackendError, ContractError, NumericError, ValidationError
from .textnorm import tokenize

DEFAULT_BETA = 0.1
DEFAULT_K = 4
DEFAULT_VOCAB = 100


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.7
    seed: int = 0
    max_len: int = 250

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "seed": self.seed, "max_len": self.max_len}


@dataclass(frozen=True)
class CandidateSet:
    prompt_id: str
    candidates: tuple[str, ...]
    generation_config: GenerationConfig

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))

    @property
    def k(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "candidates": list(self.candidates),
                "generation_config": self.generation_config.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        return cls(d["prompt_id"], tuple(d["candidates"]), GenerationConfig(**d["generation_config"]))


@dataclass(frozen=True)
class CandidateRanking:
    prompt_id: str
    order: tuple[int, ...]
    judge_id: str
    scores: tuple[float | None, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if sorted(self.order) != list(range(len(self.order))):
            raise ValidationError(f"ranking {self.order} is not a permutation")

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "order": list(self.order),
                "judge_id": self.judge_id, "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateRanking":
        return cls(d["prompt_id"], tuple(d["order"]), d["judge_id"], tuple(d.get("scores", ())))


@dataclass(frozen=True)
class PreferencePair:
    prompt_id: str
    chosen: str
    rejected: str
    stage: int

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValidationError("chosen and rejected responses are identical")
        if isinstance(self.stage, bool) or int(self.stage) != self.stage or self.stage < 1:
            raise ValidationError(f"stage must be an integer >= 1, got {self.stage!r}")

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "chosen": self.chosen,
                "rejected": self.rejected, "stage": self.stage}

    @classmethod
    def from_dict(cls, d: dict) -> "PreferencePair":
        return cls(d["prompt_id"], d["chosen"], d["rejected"], d["stage"])


def param_hash(params: np.ndarray) -> str:
    p = np.ascontiguousarray(params, dtype="<f8")
    h = hashlib.sha256(str(p.shape).encode())
    h.update(p.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class PolicySnapshot:
    """Write-once policy parameters for one curriculum iteration."""

    iteration: int
    parameters: np.ndarray
    param_hash: str = ""
    history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if isinstance(self.iteration, bool) or int(self.iteration) != self.iteration or self.iteration < 0:
            raise ValidationError("snapshot iteration must be an integer >= 0")
        p = np.array(self.parameters, dtype=np.float64, copy=True)
        p.setflags(write=False)
        object.__setattr__(self, "parameters", p)
        digest = param_hash(p)
        if self.param_hash and self.param_hash != digest:
            raise ValidationError("snapshot param_hash does not match its parameters")
        object.__setattr__(self, "param_hash", digest)

    def to_arrays(self) -> dict:
        return {"parameters": np.asarray(self.parameters)}

    def index_entry(self) -> dict:
        return {"iteration": self.iteration, "param_hash": self.param_hash,
                "history": list(self.history)}


@dataclass(frozen=True)
class DpoBatchItem:
    logp_policy_chosen: float
    logp_policy_rejected: float
    logp_ref_chosen: float
    logp_ref_rejected: float
    beta: float = DEFAULT_BETA


# ---------------------------------------------------------------------------
# Step 1: candidates and judge ranking


def _truncate(text: str, max_len: int) -> str:
    words = text.split()
    return " ".join(words[:max_len])


def generate_candidates(prompt, k: int = DEFAULT_K, backend=None,
                        config: GenerationConfig | None = None) -> CandidateSet:
    """Sample ``k`` candidate summaries, candidate i with seed ``seed + i``.

    Duplicate candidates are kept; the judge's tie-break orders them.

    Raises:
        ContractError: ``k < 2``.
        BackendError: the generator failed.
    """
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise ContractError(f"need at least 2 candidates to form a pair, got k={k!r}")
    if backend is None:
        raise ContractError("a generator backend is required")
    config = config or GenerationConfig()
    text = prompt.rendered if hasattr(prompt, "rendered") else str(prompt)
    out = []
    for i in range(int(k)):
        try:
            s = backend.generate(text, seed=config.seed + i, temperature=config.temperature,
                                 max_len=config.max_len)
        except AdvisumError:
            raise
        except Exception as e:
            raise BackendError(f"generation failed for candidate {i}: {e!r}") from e
        out.append(_truncate(s or "", config.max_len))
    return CandidateSet(getattr(prompt, "asset_id", "") or "", tuple(out), config)


def rank_candidates(prompt, cands: CandidateSet, judge, judge_id: str = "judge") -> CandidateRanking:
    """Strict best-first order from judge scores.

    Higher score is better; equal scores fall back to ascending index.
    Candidates the judge left unscored (``None``, NaN or a short score list)
    come after all scored ones, again by index.
    """
    text = prompt.rendered if hasattr(prompt, "rendered") else str(prompt)
    try:
        raw = list(judge.score(text, list(cands.candidates)))
    except AdvisumError:
        raise
    except Exception as e:
        raise BackendError(f"judge failed: {e!r}") from e
    scores: list[float | None] = []
    for i in range(cands.k):
        v = raw[i] if i < len(raw) else None
        scores.append(float(v) if v is not None and math.isfinite(float(v)) else None)
    scored = sorted((i for i in range(cands.k) if scores[i] is not None), key=lambda i: (-scores[i], i))
    unscored = [i for i in range(cands.k) if scores[i] is None]
    return CandidateRanking(cands.prompt_id, tuple(scored + unscored), judge_id, tuple(scores))


# ---------------------------------------------------------------------------
# Step 2: curriculum


def curriculum_schedule(k: int) -> list[tuple[int, int, int]]:
    """(stage, chosen_rank, rejected_rank) with 0-based ranks: best vs worst first."""
    if k < 2:
        raise ContractError("a curriculum needs at least 2 ranked candidates")
    return [(s, 0, k - s) for s in range(1, k)]


def curriculum_pairs(ranking: CandidateRanking, cands: CandidateSet | None = None) -> list[PreferencePair]:
    """Best candidate against the worst, then the next-worst, up to the runner-up.

    With ``cands`` omitted the responses are labelled ``R1..Rk`` by rank,
    which is handy for inspecting the schedule. Pairs whose two texts are
    identical carry no preference signal and are dropped; stage numbers of
    the remaining pairs are unchanged.
    """
    order = ranking.order
    schedule = curriculum_schedule(len(order))
    text = (lambda r: cands.candidates[order[r]]) if cands is not None else (lambda r: f"R{r + 1}")
    out = []
    for stage, w, l in schedule:
        if text(w) == text(l):
            continue
        out.append(PreferencePair(ranking.prompt_id, text(w), text(l), stage))
    return out


# ---------------------------------------------------------------------------
# Step 3: the loss


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class DpoGradients:
    policy_chosen: np.ndarray
    policy_rejected: np.ndarray


def _as_arrays(batch):
    if not batch:
        raise ContractError("DPO batch must be non-empty")
    a = np.array([[b.logp_policy_chosen, b.logp_policy_rejected, b.logp_ref_chosen,
                   b.logp_ref_rejected, b.beta] for b in batch], dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite value in DPO batch")
    if np.any(a[:, 4] <= 0):
        raise ContractError("beta must be positive")
    return a


def dpo_loss(batch: list[DpoBatchItem]) -> tuple[float, DpoGradients]:
    """Mean of ``-log sigmoid(beta * margin)`` with its gradient.

    ``margin = (pc - rc) - (pr - rr)`` for policy/reference log-probs of the
    chosen (c) and rejected (r) responses. Gradients are with respect to the
    policy log-probabilities: ``-beta*sigmoid(-beta*margin)/N`` for chosen and
    the negation for rejected.
    """
    a = _as_arrays(batch)
    pc, pr, rc, rr, beta = a.T
    z = beta * ((pc - rc) - (pr - rr))
    n = len(batch)
    loss = float(np.mean(-log_sigmoid(z)))
    g = beta * sigmoid(-z) / n
    return loss, DpoGradients(-g, g)


# ---------------------------------------------------------------------------
# Toy policy


def token_ids(text: str, vocab_size: int) -> list[int]:
    return [zlib.crc32(t.encode("utf-8")) % vocab_size for t in tokenize(text)]


@dataclass(frozen=True)
class CategoricalLM:
    """Categorical language model over ``vocab_size`` hashed tokens.

    ``order=0`` is a unigram model with ``vocab_size`` logits; ``order=1``
    conditions on the previous token (plus a start row), giving a
    ``(vocab_size + 1) x vocab_size`` logit table. Parameters are flattened.
    Only response tokens are scored; the prompt is not part of the sequence
    log-probability.
    """

    vocab_size: int = DEFAULT_VOCAB
    order: int = 1

    @property
    def n_params(self) -> int:
        rows = 1 if self.order == 0 else self.vocab_size + 1
        return rows * self.vocab_size

    def init_params(self, seed: int = 0, scale: float = 0.01) -> np.ndarray:
        return np.random.default_rng(seed).normal(0.0, scale, self.n_params)

    def _table(self, params: np.ndarray) -> np.ndarray:
        return np.asarray(params, dtype=np.float64).reshape(-1, self.vocab_size)

    def _contexts(self, ids: list[int]) -> list[int]:
        if self.order == 0:
            return [0] * len(ids)
        return [self.vocab_size] + ids[:-1]

    def encode(self, text: str) -> list[int]:
        return token_ids(text, self.vocab_size)

    def sequence_logprob(self, params: np.ndarray, ids: list[int]) -> tuple[float, np.ndarray]:
        """Sum of token log-probabilities and its gradient w.r.t. ``params``."""
        table = self._table(params)
        grad = np.zeros_like(table)
        if not ids:
            return 0.0, grad.reshape(-1)
        ctx = np.array(self._contexts(ids))
        tok = np.array(ids)
        logits = table[ctx]
        m = logits.max(axis=1, keepdims=True)
        logz = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        lp = float(np.sum(logits[np.arange(len(ids)), tok] - logz))
        probs = np.exp(logits - logz[:, None])
        np.add.at(grad, ctx, -probs)
        np.add.at(grad, (ctx, tok), 1.0)
        return lp, grad.reshape(-1)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.5
    epochs: int = 1
    batch_size: int = 4
    seed: int = 0
    max_grad_norm: float | None = None


def _check_stage(pairs: list[PreferencePair], expected: int):
    stages = {p.stage for p in pairs}
    if len(stages) > 1:
        raise ContractError(f"pairs span several curriculum stages: {sorted(stages)}")
    if stages and stages != {expected}:
        raise ContractError(f"pairs belong to stage {stages.pop()}, expected stage {expected}")


def modified_dpo_iteration(policy: PolicySnapshot, pairs: list[PreferencePair],
                           beta: float = DEFAULT_BETA, optimizer: OptimizerConfig | None = None,
                           model: CategoricalLM | None = None) -> PolicySnapshot:
    """One curriculum stage: train against the frozen snapshot ``policy``.

    Reference log-probabilities are computed once from the snapshot and the
    trainable copy starts from the same parameters. Minibatch SGD runs for
    ``optimizer.epochs`` passes over the pairs in a seed-determined order.

    Raises:
        ContractError: pairs from more than one stage, or not stage i+1.
        NumericError: the loss or parameters stopped being finite.
    """
    optimizer = optimizer or OptimizerConfig()
    model = model or CategoricalLM()
    if beta <= 0:
        raise ContractError("beta must be positive")
    if policy.parameters.size != model.n_params:
        raise ContractError("snapshot parameters do not fit the policy model")
    _check_stage(pairs, policy.iteration + 1)
    encoded = [(model.encode(p.chosen), model.encode(p.rejected)) for p in pairs]
    ref = policy.parameters
    ref_lp = [(model.sequence_logprob(ref, c)[0], model.sequence_logprob(ref, r)[0]) for c, r in encoded]
    theta = np.array(ref, dtype=np.float64, copy=True)
    rng = np.random.default_rng(optimizer.seed)
    history = []
    for epoch in range(optimizer.epochs):
        order = rng.permutation(len(pairs)) if pairs else np.array([], dtype=int)
        epoch_loss = 0.0
        for start in range(0, len(order), optimizer.batch_size):
            idx = order[start:start + optimizer.batch_size]
            items, grads = [], []
            for i in idx:
                lc, gc = model.sequence_logprob(theta, encoded[i][0])
                lr_, gr = model.sequence_logprob(theta, encoded[i][1])
                items.append(DpoBatchItem(lc, lr_, ref_lp[i][0], ref_lp[i][1], beta))
                grads.append((gc, gr))
            loss, g = dpo_loss(items)
            total = np.zeros_like(theta)
            for j, (gc, gr) in enumerate(grads):
                total += g.policy_chosen[j] * gc + g.policy_rejected[j] * gr
            if optimizer.max_grad_norm is not None:
                norm = np.linalg.norm(total)
                if norm > optimizer.max_grad_norm:
                    total *= optimizer.max_grad_norm / norm
            theta -= optimizer.lr * total
            if not (math.isfinite(loss) and np.all(np.isfinite(theta))):
                raise NumericError(
                    f"modified DPO diverged at iteration {policy.iteration + 1}, epoch {epoch}, "
                    f"batch starting {start}: loss={loss}, |grad|={np.linalg.norm(total):.3g}")
            epoch_loss += loss * len(idx)
        if pairs:
            history.append(epoch_loss / len(pairs))
    return PolicySnapshot(policy.iteration + 1, theta, history=tuple(history))


def run_curriculum(initial: PolicySnapshot, pairs: list[PreferencePair], stages: int,
                   beta: float = DEFAULT_BETA, optimizer: OptimizerConfig | None = None,
                   model: CategoricalLM | None = None) -> list[PolicySnapshot]:
    """Chain stages 1..``stages``; returns snapshots for iterations 0..stages."""
    snaps = [initial]
    for s in range(1, stages + 1):
        stage_pairs = [p for p in pairs if p.stage == s]
        snaps.append(modified_dpo_iteration(snaps[-1], stage_pairs, beta, optimizer, model))
    return snaps


def implied_rewards(texts: list[str], policy: PolicySnapshot, reference: PolicySnapshot,
                    model: CategoricalLM, beta: float = DEFAULT_BETA) -> list[float]:
    """Length-normalised ``beta * (log pi(y) - log pi_ref(y))`` per text."""
    out = []
    for t in texts:
        ids = model.encode(t)
        if not ids:
            out.append(-math.inf)
            continue
        lp = model.sequence_logprob(policy.parameters, ids)[0]
        lr = model.sequence_logprob(reference.parameters, ids)[0]
        out.append(beta * (lp - lr) / len(ids))
    return out


def pick_summary(cands: CandidateSet, policy: PolicySnapshot, reference: PolicySnapshot,
                 model: CategoricalLM, beta: float = DEFAULT_BETA) -> tuple[int, str]:
    r = implied_rewards(list(cands.candidates), policy, reference, model, beta)
    best = min(range(len(r)), key=lambda i: (-r[i], i))
    return best, cands.candidates[best]


# ---------------------------------------------------------------------------
# Fact consistency

_NUM_RE = re.compile(r"(?<![\w.])\d+(?:[.,]\d+)*(?:\s*[-–]\s*\d+(?:[.,]\d+)*)?\s*%?")
_CAP_RE = re.compile(r"\b[A-Z][\w&'.-]*(?:\s+[A-Z][\w&'.-]*)+")
_LEADING = {"The", "A", "An", "In", "On", "At", "Of", "For", "And", "But", "Or", "So", "This",
            "That", "These", "Those", "It", "We", "I", "You", "He", "She", "They", "Our", "My"}


def normalize_numeral(s: str) -> str:
    s = s.replace("–", "-")
    s = re.sub(r"\s+", "", s)
    return re.sub(r"(?<=\d),(?=\d{3}\b)", "", s)


def extract_fact_items(text: str) -> tuple[list[str], list[str]]:
    """Numerals (with ranges and percent signs) and capitalised multi-word names."""
    nums = [normalize_numeral(m.group(0)) for m in _NUM_RE.finditer(text)]
    names = []
    for m in _CAP_RE.finditer(text):
        words = m.group(0).split()
        while words and words[0] in _LEADING:
            words.pop(0)
        if len(words) >= 2:
            names.append(" ".join(w.rstrip(".") for w in words))
    return nums, names


def fact_consistency_score(summary: str, bos) -> float:
    """Share of the summary's figures and names that occur in the BOS prompt.

    Figures match against the normalised figures of the prompt (so ``5%``
    does not match inside ``15%``); names match as whole-word substrings.
    A summary with no checkable items scores 1.0.
    """
    source = bos.rendered if hasattr(bos, "rendered") else str(bos)
    nums, names = extract_fact_items(summary)
    total = len(nums) + len(names)
    if total == 0:
        return 1.0
    src_nums = set(extract_fact_items(source)[0])
    hit = sum(n in src_nums for n in nums)
    hit += sum(bool(re.search(rf"(?<!\w){re.escape(n)}(?!\w)", source)) for n in names)
    return hit / total
