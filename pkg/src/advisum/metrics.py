"""Text, frame-selection and human-evaluation metrics.

Text metrics accept either raw strings (run through
:func:`advisum.textnorm.tokenize`) or pre-tokenized lists.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AdvisumError, BackendError, ContractError, DimensionError
from .textnorm import tokenize

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class TextScore:
    """``value`` is F1 for the precision/recall metrics and the score itself for BLEU."""

    metric: str
    value: float
    precision: float | None = None
    recall: float | None = None

    @property
    def f1(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        d = {"metric": self.metric, "value": self.value}
        if self.precision is not None:
            d.update(precision=self.precision, recall=self.recall)
        return d


@dataclass(frozen=True)
class FrameSelectionScore:
    rmse: float
    ssim: float
    f1: float

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "ssim": self.ssim, "f1": self.f1}


def _toks(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _prf(metric: str, overlap: float, n_cand: int, n_ref: int) -> TextScore:
    if n_cand == 0 or n_ref == 0:
        return TextScore(metric, 0.0, 0.0, 0.0)
    p = overlap / n_cand
    r = overlap / n_ref
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return TextScore(metric, f, p, r)


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int = 1) -> TextScore:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ContractError(f"n must be a positive integer, got {n!r}")
    c, r = ngrams(_toks(candidate), n), ngrams(_toks(reference), n)
    overlap = sum((c & r).values())
    return _prf(f"ROUGE-{n}", overlap, sum(c.values()), sum(r.values()))


def _ids(a: list[str], b: list[str]):
    vocab: dict[str, int] = {}
    ia = [vocab.setdefault(t, len(vocab)) for t in a]
    ib = [vocab.setdefault(t, len(vocab)) for t in b]
    return ia, ib


def lcs_length(a: list[str], b: list[str]) -> int:
    ia, ib = _ids(a, b)
    return kernels.lcs_length(ia, ib)


def rouge_l(candidate, reference) -> TextScore:
    c, r = _toks(candidate), _toks(reference)
    return _prf("ROUGE-L", lcs_length(c, r), len(c), len(r))


def bleu(candidate, reference, max_n: int = 4) -> list[TextScore]:
    """Cumulative BLEU-1..BLEU-``max_n`` against a single reference.

    BLEU-k = BP * exp(mean(log p_1..p_k)) with clipped n-gram precisions and
    BP = min(1, exp(1 - r/c)). A zero clipped count is replaced by
    1 / (2 * number of candidate n-grams). When the candidate has no
    n-grams of some order (it is shorter than n), BLEU-k is 0 from that order on.
    """
    if isinstance(max_n, bool) or int(max_n) != max_n or max_n < 1:
        raise ContractError(f"max_n must be a positive integer, got {max_n!r}")
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        return [TextScore(f"BLEU-{k}", 0.0) for k in range(1, max_n + 1)]
    bp = min(1.0, math.exp(1 - len(r) / len(c)))
    out, logs = [], []
    for n in range(1, max_n + 1):
        cn, rn = ngrams(c, n), ngrams(r, n)
        total = sum(cn.values())
        if total == 0:
            logs.append(-math.inf)
        else:
            clipped = sum(min(k, rn[g]) for g, k in cn.items())
            p = clipped / total if clipped else 1.0 / (2 * total)
            logs.append(math.log(p))
        mean = sum(logs) / len(logs)
        out.append(TextScore(f"BLEU-{n}", 0.0 if mean == -math.inf else bp * math.exp(mean)))
    return out


def embedding_f1(candidate, reference, embedder) -> TextScore:
    """Greedy cosine matching of token embeddings (BERTScore-style, no idf).

    Precision averages, over candidate tokens, the best cosine against any
    reference token; recall does the same from the reference side. Every
    occurrence of a repeated token is matched independently.
    """
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        return TextScore("EMB-F1", 0.0, 0.0, 0.0)
    try:
        emb = np.asarray(embedder.embed_tokens(c + r), dtype=np.float64)
    except AdvisumError:
        raise
    except Exception as e:
        raise BackendError(f"embedding backend failed: {e!r}") from e
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = np.divide(emb, norms, out=np.zeros_like(emb), where=norms > 0)
    sim = emb[: len(c)] @ emb[len(c):].T
    p = float(np.clip(sim.max(axis=1), 0.0, 1.0).mean())
    rc = float(np.clip(sim.max(axis=0), 0.0, 1.0).mean())
    f = 0.0 if p + rc == 0 else 2 * p * rc / (p + rc)
    return TextScore("EMB-F1", f, p, rc)


def text_scores(candidate, reference, embedder=None) -> dict[str, TextScore]:
    out = {s.metric: s for s in (rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2),
                                 rouge_l(candidate, reference))}
    out.update({s.metric: s for s in bleu(candidate, reference, 4)})
    if embedder is not None:
        out["EMB-F1"] = embedding_f1(candidate, reference, embedder)
    return out


def _check_pair(a: np.ndarray, b: np.ndarray):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def rmse_image(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    raise DimensionError(f"unsupported image shape {img.shape}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_map(a, b) -> np.ndarray:
    a, b = _check_pair(a, b)
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {x.shape}")
    k = gaussian_window()
    mx, my = kernels.filter_valid(x, k), kernels.filter_valid(y, k)
    sxx = kernels.filter_valid(x * x, k) - mx * mx
    syy = kernels.filter_valid(y * y, k) - my * my
    sxy = kernels.filter_valid(x * y, k) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim_image(a, b) -> float:
    """Mean SSIM over the valid region, 11x11 Gaussian window (sigma 1.5),
    on ITU-R 601 grayscale in the 0-255 range."""
    return float(np.clip(ssim_map(a, b).mean(), -1.0, 1.0))


def frame_selection_f1(selected, gold) -> float:
    s, g = set(selected), set(gold)
    if not s and not g:
        return 1.0
    if not s or not g:
        return 0.0
    hit = len(s & g)
    if hit == 0:
        return 0.0
    p, r = hit / len(s), hit / len(g)
    return 2 * p * r / (p + r)


def frame_selection_score(selected_frames, gold_frames, selected_idx, gold_idx) -> FrameSelectionScore:
    """RMSE/SSIM of each selected frame against its most similar gold frame, averaged."""
    if not selected_frames or not gold_frames:
        return FrameSelectionScore(0.0 if not selected_frames and not gold_frames else float("nan"),
                                   float("nan"), frame_selection_f1(selected_idx, gold_idx))
    rm, ss = [], []
    for f in selected_frames:
        rm.append(min(rmse_image(f, g) for g in gold_frames))
        ss.append(max(ssim_image(f, g) for g in gold_frames))
    return FrameSelectionScore(float(np.mean(rm)), float(np.mean(ss)),
                               frame_selection_f1(selected_idx, gold_idx))


VOTE_VALUES = {"match": 1.0, "tie": 0.5, "mismatch": 0.0}


def tie_discounted_accuracy(votes) -> float:
    votes = list(votes)
    if not votes:
        raise ContractError("tie-discounted accuracy needs at least one vote")
    try:
        return sum(VOTE_VALUES[v] for v in votes) / len(votes)
    except KeyError as e:
        raise ContractError(f"unknown vote {e.args[0]!r}; expected match, tie or mismatch") from None
