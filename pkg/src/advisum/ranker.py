"""Text-to-frame relevance ranking.

Frame features and the summary embedding are projected to a shared width,
frames are contextualised by a pre-norm transformer encoder with learned
positions, a multi-head cross-attention aligns the summary (query) with the
frames (keys/values), and an affine+sigmoid head scores each frame. The
loss is mean BCE on the scores plus ``lam * ||A A^T - I||_F^2`` on the
cross-attention matrix ``A`` (heads x frames).

Everything runs in float64 numpy with an explicit backward pass; items with
the same frame count are processed as one batch.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assets import atomic_write
from .errors import ContractError, DimensionError, NumericError, ValidationError
from .metrics import frame_selection_f1
from .preference import sigmoid

BCE_EPS = 1e-7
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class RankerConfig:
    image_dim: int = 2048
    text_dim: int = 768
    width: int = 512
    layers: int = 2
    heads: int = 4
    ffn: int = 2048
    n_max: int = 256
    lam: float = 0.1
    positional: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.width % self.heads:
            raise ContractError("width must be divisible by heads")
        if self.lam < 0:
            raise ContractError("lambda must be non-negative")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


def param_shapes(cfg: RankerConfig) -> dict[str, tuple]:
    w, f = cfg.width, cfg.ffn
    shapes = {
        "image_proj.W": (cfg.image_dim, w), "image_proj.b": (w,),
        "text_proj.W": (cfg.text_dim, w), "text_proj.b": (w,),
        "pos": (cfg.n_max, w),
    }
    for l in range(cfg.layers):
        p = f"enc{l}."
        shapes.update({
            p + "ln1.g": (w,), p + "ln1.b": (w,),
            p + "Wq": (w, w), p + "bq": (w,), p + "Wk": (w, w), p + "bk": (w,),
            p + "Wv": (w, w), p + "bv": (w,), p + "Wo": (w, w), p + "bo": (w,),
            p + "ln2.g": (w,), p + "ln2.b": (w,),
            p + "W1": (w, f), p + "b1": (f,), p + "W2": (f, w), p + "b2": (w,),
        })
    shapes.update({
        "cross.Wq": (w, w), "cross.bq": (w,), "cross.Wk": (w, w), "cross.bk": (w,),
        "cross.Wv": (w, w), "cross.bv": (w,),
        "score.W": (w,), "score.b": (),
    })
    return shapes


def init_params(cfg: RankerConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            out[name] = np.ones(shape)
        elif name == "pos":
            out[name] = rng.normal(0.0, 0.02, shape)
        elif len(shape) == 2:
            out[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        elif name == "score.W":
            out[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        else:
            out[name] = np.zeros(shape)
    return out


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        a = np.array(params[name], dtype="<f8", order="C")
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class RankerModel:
    config: RankerConfig
    params: dict[str, np.ndarray]

    @classmethod
    def create(cls, config: RankerConfig | None = None, seed: int = 0) -> "RankerModel":
        config = config or RankerConfig()
        return cls(config, init_params(config, seed))

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.params):
            raise ValidationError("parameter names do not match the configuration")
        for k, s in shapes.items():
            a = np.asarray(self.params[k], dtype=np.float64)
            if a.shape != s:
                raise ValidationError(f"parameter {k} has shape {a.shape}, expected {s}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"parameter {k} is not finite")
            self.params[k] = a

    @property
    def param_hash(self) -> str:
        return params_digest(self.params)

    def copy(self) -> "RankerModel":
        return RankerModel(self.config, {k: v.copy() for k, v in self.params.items()})


# ---------------------------------------------------------------------------
# Building blocks (forward returns a cache, backward consumes it)


def _layernorm(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_back(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(red), dy.sum(red)


def _gelu(z):
    t = np.tanh(_GELU_C * (z + 0.044715 * z ** 3))
    return 0.5 * z * (1.0 + t), t


def _gelu_back(dy, z, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)
    return dy * (0.5 * (1.0 + t) + 0.5 * z * dt)


def softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_back(dA, A):
    return A * (dA - (dA * A).sum(-1, keepdims=True))


def _split(x, heads):
    # (B, N, W) -> (B, H, N, dh)
    b, n, w = x.shape
    return x.reshape(b, n, heads, w // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def _lin_back(dy, x, W):
    """Gradients of y = x @ W + b for batched x."""
    dW = np.tensordot(x, dy, axes=(tuple(range(x.ndim - 1)), tuple(range(dy.ndim - 1))))
    db = dy.sum(tuple(range(dy.ndim - 1)))
    return dy @ W.T, dW, db


def _check_vectors(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise DimensionError(f"{what} must have length {dim}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what} contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# Operations


def project_image(raw, model: RankerModel) -> np.ndarray:
    raw = _check_vectors(raw, model.config.image_dim, "image feature")
    return raw @ model.params["image_proj.W"] + model.params["image_proj.b"]


def project_text(raw, model: RankerModel) -> np.ndarray:
    raw = _check_vectors(raw, model.config.text_dim, "text feature")
    return raw @ model.params["text_proj.W"] + model.params["text_proj.b"]


def _check_count(n: int, cfg: RankerConfig):
    if n < 1:
        raise ContractError("need at least one frame")
    if n > cfg.n_max:
        raise ContractError(f"{n} frames exceed the encoder limit of {cfg.n_max}")


def _encode(X, model: RankerModel):
    """X: (B, N, W) projected frames -> (H_frame, caches)."""
    cfg, P = model.config, model.params
    _check_count(X.shape[1], cfg)
    if cfg.positional:
        X = X + P["pos"][: X.shape[1]]
    caches = []
    scale = 1.0 / math.sqrt(cfg.head_dim)
    for l in range(cfg.layers):
        p = f"enc{l}."
        U, ln1 = _layernorm(X, P[p + "ln1.g"], P[p + "ln1.b"], cfg.ln_eps)
        Q = _split(U @ P[p + "Wq"] + P[p + "bq"], cfg.heads)
        K = _split(U @ P[p + "Wk"] + P[p + "bk"], cfg.heads)
        V = _split(U @ P[p + "Wv"] + P[p + "bv"], cfg.heads)
        A = softmax(Q @ K.transpose(0, 1, 3, 2) * scale)
        O = _merge(A @ V)
        X1 = X + O @ P[p + "Wo"] + P[p + "bo"]
        U2, ln2 = _layernorm(X1, P[p + "ln2.g"], P[p + "ln2.b"], cfg.ln_eps)
        Z = U2 @ P[p + "W1"] + P[p + "b1"]
        G, T = _gelu(Z)
        X2 = X1 + G @ P[p + "W2"] + P[p + "b2"]
        caches.append((U, ln1, Q, K, V, A, O, U2, ln2, Z, G, T))
        X = X2
    return X, caches


def _encode_back(dX, caches, model: RankerModel, grads):
    cfg, P = model.config, model.params
    scale = 1.0 / math.sqrt(cfg.head_dim)
    for l in reversed(range(cfg.layers)):
        p = f"enc{l}."
        U, ln1, Q, K, V, A, O, U2, ln2, Z, G, T = caches[l]
        # FFN branch
        dG, grads[p + "W2"], grads[p + "b2"] = _lin_back(dX, G, P[p + "W2"])
        dZ = _gelu_back(dG, Z, T)
        dU2, grads[p + "W1"], grads[p + "b1"] = _lin_back(dZ, U2, P[p + "W1"])
        dX1_ln, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layernorm_back(dU2, ln2)
        dX1 = dX + dX1_ln
        # attention branch
        dO, grads[p + "Wo"], grads[p + "bo"] = _lin_back(dX1, O, P[p + "Wo"])
        dOh = _split(dO, cfg.heads)
        dA = dOh @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dOh
        dS = _softmax_back(dA, A) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dU = np.zeros_like(U)
        for name, d in (("q", dQ), ("k", dK), ("v", dV)):
            du, grads[p + "W" + name], grads[p + "b" + name] = _lin_back(_merge(d), U, P[p + "W" + name])
            dU += du
        dX0_ln, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layernorm_back(dU, ln1)
        dX = dX1 + dX0_ln
    return dX


def encode_frames(projected, model: RankerModel) -> np.ndarray:
    """Context vectors for N projected frames, shape (N, width)."""
    X = np.asarray(projected, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("need a non-empty (N, width) array of projected frames")
    if X.shape[1] != model.config.width:
        raise DimensionError(f"projected frames must have width {model.config.width}")
    H, _ = _encode(X[None], model)
    return H[0]


def _cross(t, H, model: RankerModel):
    """t: (B, W) text, H: (B, N, W) -> A (B, heads, N) and caches."""
    cfg, P = model.config, model.params
    q = (t @ P["cross.Wq"] + P["cross.bq"]).reshape(t.shape[0], cfg.heads, cfg.head_dim)
    K = _split(H @ P["cross.Wk"] + P["cross.bk"], cfg.heads)
    logits = np.einsum("bhd,bhnd->bhn", q, K) / math.sqrt(cfg.head_dim)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite attention logits")
    A = softmax(logits)
    return A, (q, K)


def attention_align(text_proj, H_frame, model: RankerModel) -> np.ndarray:
    """Cross-attention weights, one softmax row per head over the frames."""
    H = np.asarray(H_frame, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ContractError("H_frame must be a non-empty (N, width) array")
    A, _ = _cross(np.asarray(text_proj, dtype=np.float64)[None], H[None], model)
    return A[0]


def attended_context(text_proj, H_frame, model: RankerModel) -> np.ndarray:
    """Per-head attention-weighted value vectors, concatenated to (width,)."""
    A = attention_align(text_proj, H_frame, model)
    V = np.asarray(H_frame) @ model.params["cross.Wv"] + model.params["cross.bv"]
    Vh = V.reshape(V.shape[0], model.config.heads, -1).transpose(1, 0, 2)
    return np.einsum("hn,hnd->hd", A, Vh).reshape(-1)


def score_frames(H_frame, model: RankerModel) -> np.ndarray:
    H = np.asarray(H_frame, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ContractError("H_frame must be a non-empty (N, width) array")
    return sigmoid(H @ model.params["score.W"] + model.params["score.b"])


def bce_loss(scores, labels) -> float:
    s = np.clip(np.asarray(scores, dtype=np.float64), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(s) + (1 - y) * np.log(1 - s)))


def diversity_loss(A) -> float:
    A = np.asarray(A, dtype=np.float64)
    G = A @ A.T - np.eye(A.shape[0])
    return float(np.sum(G * G))


@dataclass
class LossResult:
    loss: float
    bce: float
    diversity: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    scores: np.ndarray | None = None
    attention: np.ndarray | None = None


def ranker_loss(scores, labels, A, lam: float) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its gradients w.r.t. ``scores`` and ``A`` for one item.

    BCE uses probabilities clamped to [1e-7, 1-1e-7]; the clamp has zero
    slope outside that range. Use :func:`ranker_loss_and_grads` for
    gradients w.r.t. model parameters.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores but {y.size} labels")
    if A.ndim != 2 or A.shape[1] != s.size:
        raise ContractError("attention matrix must be heads x frames")
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    c = np.clip(s, BCE_EPS, 1 - BCE_EPS)
    n = s.size
    bce = float(-np.mean(y * np.log(c) + (1 - y) * np.log(1 - c)))
    inside = (s >= BCE_EPS) & (s <= 1 - BCE_EPS)
    ds = np.where(inside, (-y / c + (1 - y) / (1 - c)) / n, 0.0)
    G = A @ A.T - np.eye(A.shape[0])
    div = float(np.sum(G * G))
    dA = lam * 4.0 * G @ A
    return bce + lam * div, {"scores": ds, "A": dA, "bce": bce, "diversity": div}


def _forward_batch(img, txt, model: RankerModel):
    P = model.params
    X = img @ P["image_proj.W"] + P["image_proj.b"]
    t = txt @ P["text_proj.W"] + P["text_proj.b"]
    H, enc = _encode(X, model)
    A, cross = _cross(t, H, model)
    s = sigmoid(H @ P["score.W"] + P["score.b"])
    return s, A, (X, t, H, enc, cross)


def ranker_loss_and_grads(img, txt, labels, model: RankerModel, want_grads: bool = True) -> LossResult:
    """Mean loss over a batch of items with equal frame count.

    Args:
        img: (B, N, image_dim) raw frame features.
        txt: (B, text_dim) raw summary features.
        labels: (B, N) relevance labels in {0, 1}.
    """
    cfg, P = model.config, model.params
    img = _check_vectors(img, cfg.image_dim, "image feature")
    txt = _check_vectors(txt, cfg.text_dim, "text feature")
    if img.ndim == 2:
        img, txt, labels = img[None], txt[None], np.asarray(labels)[None]
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != img.shape[:2]:
        raise ContractError(f"labels shape {y.shape} does not match frames {img.shape[:2]}")
    B = img.shape[0]
    s, A, (X, t, H, enc, (q, K)) = _forward_batch(img, txt, model)
    total = bce = div = 0.0
    dS = np.zeros_like(s)
    dA = np.zeros_like(A)
    for b in range(B):
        l, g = ranker_loss(s[b], y[b], A[b], cfg.lam)
        total += l / B
        bce += g["bce"] / B
        div += g["diversity"] / B
        dS[b] = g["scores"] / B
        dA[b] = g["A"] / B
    res = LossResult(total, bce, div, scores=s, attention=A)
    if not want_grads:
        return res
    grads: dict[str, np.ndarray] = {}
    # scoring head
    dz = dS * s * (1 - s)
    grads["score.W"] = np.einsum("bn,bnw->w", dz, H)
    grads["score.b"] = np.array(dz.sum())
    dH = dz[..., None] * P["score.W"]
    # cross-attention (values do not reach the loss)
    dlog = _softmax_back(dA, A) / math.sqrt(cfg.head_dim)
    dq = np.einsum("bhn,bhnd->bhd", dlog, K).reshape(B, cfg.width)
    dK = _merge(np.einsum("bhn,bhd->bhnd", dlog, q))
    dHk, grads["cross.Wk"], grads["cross.bk"] = _lin_back(dK, H, P["cross.Wk"])
    dH = dH + dHk
    dt, grads["cross.Wq"], grads["cross.bq"] = _lin_back(dq, t, P["cross.Wq"])
    grads["cross.Wv"] = np.zeros_like(P["cross.Wv"])
    grads["cross.bv"] = np.zeros_like(P["cross.bv"])
    _, grads["text_proj.W"], grads["text_proj.b"] = _lin_back(dt, txt, P["text_proj.W"])
    # encoder and image projection
    dX = _encode_back(dH, enc, model, grads)
    grads["pos"] = np.zeros_like(P["pos"])
    if cfg.positional:
        grads["pos"][: X.shape[1]] = dX.sum(0)
    _, grads["image_proj.W"], grads["image_proj.b"] = _lin_back(dX, img, P["image_proj.W"])
    res.grads = grads
    return res


# ---------------------------------------------------------------------------
# Selection


@dataclass(frozen=True)
class RankedFrames:
    scores: tuple[float, ...]
    selected: tuple[int, ...]
    clamped: bool = False

    def to_dict(self) -> dict:
        return {"scores": list(self.scores), "selected": list(self.selected), "clamped": self.clamped}


def select_top_k(scores, k: int) -> RankedFrames:
    """Indices of the ``k`` highest scores, best first, earlier index on ties.

    ``k`` larger than the number of frames returns all frames and sets
    ``clamped``.
    """
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ContractError(f"k must be a positive integer, got {k!r}")
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(s.size), -s))
    k = int(k)
    return RankedFrames(tuple(float(x) for x in s), tuple(int(i) for i in order[:k]), k > s.size)


def rank_frames(frame_features, text_feature, model: RankerModel, k: int) -> RankedFrames:
    s, _, _ = _forward_batch(_check_vectors(frame_features, model.config.image_dim, "image feature")[None],
                             _check_vectors(text_feature, model.config.text_dim, "text feature")[None],
                             model)
    return select_top_k(s[0], k)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    target_loss: float | None = None


@dataclass(frozen=True)
class RankerItem:
    frames: np.ndarray  # (N, image_dim)
    text: np.ndarray  # (text_dim,)
    labels: np.ndarray  # (N,)


@dataclass
class TrainResult:
    model: RankerModel
    curve: list[dict]

    def to_dict(self) -> dict:
        return {"param_hash": self.model.param_hash, "curve": self.curve}


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _batches(items: list[RankerItem], batch_size: int, rng):
    groups: dict[int, list[int]] = {}
    for i, it in enumerate(items):
        groups.setdefault(len(it.labels), []).append(i)
    out = []
    for n in sorted(groups):
        idx = np.array(groups[n])[rng.permutation(len(groups[n]))]
        out.extend(idx[j:j + batch_size] for j in range(0, len(idx), batch_size))
    return [out[i] for i in rng.permutation(len(out))]


def _stack(items, idx):
    return (np.stack([items[i].frames for i in idx]), np.stack([items[i].text for i in idx]),
            np.stack([items[i].labels for i in idx]))


def dataset_loss(items: list[RankerItem], model: RankerModel) -> float:
    groups: dict[int, list[int]] = {}
    for i, it in enumerate(items):
        groups.setdefault(len(it.labels), []).append(i)
    total = 0.0
    for idx in groups.values():
        res = ranker_loss_and_grads(*_stack(items, idx), model, want_grads=False)
        total += res.loss * len(idx)
    return total / len(items)


def train_ranker(items: list[RankerItem], config: RankerConfig | None = None,
                 train: TrainConfig | None = None, model: RankerModel | None = None) -> TrainResult:
    """Adam on the ranking loss with a fixed seed.

    Items are grouped by frame count into minibatches. The curve records the
    full-dataset loss after every epoch.

    Raises:
        ContractError: an item has no positive label, or no items.
        NumericError: loss or parameters became non-finite.
    """
    train = train or TrainConfig()
    if not items:
        raise ContractError("no training items")
    for i, it in enumerate(items):
        if not np.any(np.asarray(it.labels) > 0):
            raise ContractError(f"training item {i} has no positive label")
    model = model.copy() if model is not None else RankerModel.create(config, train.seed)
    rng = np.random.default_rng(train.seed)
    opt = Adam(model.params, train.lr, train.betas, train.eps)
    curve = []
    for epoch in range(train.epochs):
        for idx in _batches(items, train.batch_size, rng):
            res = ranker_loss_and_grads(*_stack(items, idx), model)
            if not math.isfinite(res.loss):
                raise NumericError(f"ranker loss became {res.loss} at epoch {epoch} "
                                   f"(bce={res.bce}, diversity={res.diversity})")
            opt.step(model.params, res.grads)
        loss = dataset_loss(items, model)
        bad = [k for k, v in model.params.items() if not np.all(np.isfinite(v))]
        if not math.isfinite(loss) or bad:
            raise NumericError(f"ranker training diverged at epoch {epoch}: loss={loss}, "
                               f"non-finite parameters={bad[:5]}")
        curve.append({"epoch": epoch + 1, "loss": loss})
        if train.target_loss is not None and loss < train.target_loss:
            break
    return TrainResult(model, curve)


def selection_f1(items: list[RankerItem], model: RankerModel, k: int | None = None) -> float:
    """Mean frame-selection F1 of top-k against the positive labels (k = #positives by default)."""
    vals = []
    for it in items:
        gold = set(np.flatnonzero(np.asarray(it.labels) > 0).tolist())
        sel = rank_frames(it.frames, it.text, model, k or len(gold)).selected
        vals.append(frame_selection_f1(sel, gold))
    return float(np.mean(vals))


def cosine_baseline_f1(items: list[RankerItem], model: RankerModel, k: int | None = None) -> float:
    """Top-k by cosine similarity of projected frame and summary features."""
    vals = []
    for it in items:
        gold = set(np.flatnonzero(np.asarray(it.labels) > 0).tolist())
        f = project_image(it.frames, model)
        t = project_text(it.text, model)
        cos = f @ t / (np.linalg.norm(f, axis=1) * np.linalg.norm(t) + 1e-12)
        vals.append(frame_selection_f1(select_top_k(cos, k or len(gold)).selected, gold))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Checkpoints

MANIFEST_KEY = "__manifest__"


def save_checkpoint(model: RankerModel, path) -> str:
    """Flat named-tensor ``.npz`` with an embedded JSON shape manifest; returns the hash."""
    digest = model.param_hash
    manifest = {"config": asdict(model.config), "param_hash": digest,
                "shapes": {k: list(v.shape) for k, v in sorted(model.params.items())}}
    arrays = {k: np.array(v, dtype="<f8", order="C") for k, v in model.params.items()}
    arrays[MANIFEST_KEY] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **{k: arrays[k] for k in sorted(arrays)})
    atomic_write(Path(path), buf.getvalue())
    return digest


def load_checkpoint(path) -> RankerModel:
    with np.load(path) as z:
        if MANIFEST_KEY not in z.files:
            raise ValidationError(f"{path} is not a ranker checkpoint (no manifest)")
        manifest = json.loads(bytes(z[MANIFEST_KEY]).decode())
        params = {k: np.array(z[k]) for k in z.files if k != MANIFEST_KEY}
    cfg = manifest["config"]
    model = RankerModel(RankerConfig(**cfg), params)
    for k, shape in manifest["shapes"].items():
        if list(model.params[k].shape) != shape:
            raise ValidationError(f"checkpoint tensor {k} disagrees with its manifest")
    if model.param_hash != manifest["param_hash"]:
        raise ValidationError("checkpoint parameters do not match the recorded hash")
    return model
