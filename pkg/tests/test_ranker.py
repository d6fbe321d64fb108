from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advisum.errors import ContractError, DimensionError, ValidationError
from advisum.ranker import (
    RankerConfig,
    RankerItem,
    RankerModel,
    TrainConfig,
    attention_align,
    bce_loss,
    diversity_loss,
    encode_frames,
    load_checkpoint,
    project_image,
    project_text,
    rank_frames,
    ranker_loss,
    ranker_loss_and_grads,
    save_checkpoint,
    score_frames,
    select_top_k,
    train_ranker,
)

TINY = RankerConfig(image_dim=6, text_dim=5, width=8, layers=1, heads=2, ffn=16, n_max=10, lam=0.7)


def tiny(seed=0, **kw):
    cfg = RankerConfig(**{**TINY.__dict__, **kw})
    return RankerModel.create(cfg, seed)


def softmax_oracle(z):
    e = [math.exp(v) for v in z]
    return [v / sum(e) for v in e]


def fd_check(model, img, txt, y, names=None, h=1e-5):
    """Worst relative error of analytic vs central-difference gradients."""
    res = ranker_loss_and_grads(img, txt, y, model)
    worst = 0.0
    for name in names or sorted(model.params):
        p = model.params[name]
        flat = p.reshape(-1)
        g = np.asarray(res.grads[name]).reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = ranker_loss_and_grads(img, txt, y, model, want_grads=False).loss
            flat[j] = old - h
            dn = ranker_loss_and_grads(img, txt, y, model, want_grads=False).loss
            flat[j] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - g[j]) / max(1e-6, abs(fd) + abs(g[j])))
    return worst


class TestProjection:
    def test_zero_input_zero_bias(self):
        m = tiny()
        np.testing.assert_array_equal(project_image(np.zeros(6), m), np.zeros(8))

    def test_identity_like_weights(self):
        m = RankerModel.create(RankerConfig(image_dim=12, text_dim=5, width=8, heads=2, ffn=16, layers=1))
        m.params["image_proj.W"] = np.eye(12, 8)
        x = np.arange(12.0)
        np.testing.assert_array_equal(project_image(x, m), x[:8])

    def test_matches_loop(self):
        m = tiny(3)
        m.params["image_proj.b"] = np.random.default_rng(1).normal(size=8)
        x = np.random.default_rng(2).normal(size=6)
        W, b = m.params["image_proj.W"], m.params["image_proj.b"]
        want = [sum(x[i] * W[i, j] for i in range(6)) + b[j] for j in range(8)]
        np.testing.assert_allclose(project_image(x, m), want, atol=1e-10)

    def test_wrong_length(self):
        with pytest.raises(DimensionError):
            project_image(np.zeros(7), tiny())
        with pytest.raises(DimensionError):
            project_text(np.zeros(4), tiny())


class TestEncoder:
    def test_zero_branches_leave_input_plus_position(self):
        m = tiny(1)
        for k in ("enc0.Wo", "enc0.bo", "enc0.W2", "enc0.b2"):
            m.params[k][...] = 0
        x = np.random.default_rng(0).normal(size=(1, 8))
        np.testing.assert_allclose(encode_frames(x, m), x + m.params["pos"][:1], atol=1e-14)

    def test_shape(self):
        assert encode_frames(np.zeros((7, 8)), tiny()).shape == (7, 8)

    def test_permutation_equivariance_without_positions(self):
        m = tiny(2, positional=False, layers=2)
        x = np.random.default_rng(3).normal(size=(5, 8))
        perm = [3, 0, 4, 1, 2]
        np.testing.assert_allclose(encode_frames(x[perm], m), encode_frames(x, m)[perm], atol=1e-12)

    def test_frame_count_limits(self):
        with pytest.raises(ContractError):
            encode_frames(np.zeros((0, 8)), tiny())
        with pytest.raises(ContractError):
            encode_frames(np.zeros((11, 8)), tiny())


class TestAttention:
    def test_single_frame(self):
        A = attention_align(np.ones(8), np.random.default_rng(0).normal(size=(1, 8)), tiny(4))
        np.testing.assert_array_equal(A, np.ones((2, 1)))

    def test_equal_logits_uniform(self):
        m = tiny()
        m.params["cross.Wk"][...] = 0
        A = attention_align(np.ones(8), np.random.default_rng(0).normal(size=(4, 8)), m)
        np.testing.assert_allclose(A, 0.25, atol=1e-15)

    def test_matches_softmax_oracle(self):
        m = tiny(5)
        rng = np.random.default_rng(6)
        t, H = rng.normal(size=8), rng.normal(size=(4, 8))
        A = attention_align(t, H, m)
        q = t @ m.params["cross.Wq"] + m.params["cross.bq"]
        K = H @ m.params["cross.Wk"] + m.params["cross.bk"]
        for h in range(2):
            sl = slice(4 * h, 4 * h + 4)
            logits = [float(q[sl] @ K[n, sl]) / 2.0 for n in range(4)]
            np.testing.assert_allclose(A[h], softmax_oracle(logits), atol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 9), st.floats(0.1, 50))
    def test_rows_sum_to_one(self, seed, n, scale):
        rng = np.random.default_rng(seed)
        A = attention_align(rng.normal(size=8) * scale, rng.normal(size=(n, 8)) * scale, tiny(seed % 7))
        assert np.all(A >= 0)
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-6)


class TestScores:
    def test_zero_head(self):
        m = tiny()
        m.params["score.W"][...] = 0
        np.testing.assert_array_equal(score_frames(np.ones((3, 8)), m), 0.5)

    def test_bias_ten(self):
        m = tiny()
        m.params["score.W"][...] = 0
        m.params["score.b"] = np.array(10.0)
        np.testing.assert_allclose(score_frames(np.ones((2, 8)), m), 1 / (1 + math.exp(-10)), rtol=1e-15)
        assert score_frames(np.ones((1, 8)), m)[0] == pytest.approx(0.99995, abs=1e-5)

    def test_bias_monotone(self):
        m = tiny(1)
        H = np.random.default_rng(0).normal(size=(4, 8))
        before = score_frames(H, m)
        m.params["score.b"] = m.params["score.b"] + 0.5
        assert np.all(score_frames(H, m) > before)

    def test_local(self):
        m = tiny(2)
        H = np.random.default_rng(1).normal(size=(4, 8))
        H2 = H.copy()
        H2[2] += 5
        s1, s2 = score_frames(H, m), score_frames(H2, m)
        np.testing.assert_array_equal(np.delete(s1, 2), np.delete(s2, 2))


class TestLoss:
    def test_bce_half(self):
        assert bce_loss([0.5] * 4, [1, 0, 1, 1]) == pytest.approx(math.log(2), abs=1e-15)

    def test_diversity_uniform(self):
        assert diversity_loss(np.full((2, 4), 0.25)) == pytest.approx(2 * (0.25 - 1) ** 2 + 2 * 0.25 ** 2, abs=1e-12)

    def test_diversity_one_hot(self):
        assert diversity_loss(np.eye(2, 4)) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            ranker_loss([0.5, 0.5], [1], np.full((2, 2), 0.5), 0.1)

    def test_loss_gradients_direct(self):
        rng = np.random.default_rng(0)
        s, y = rng.uniform(0.05, 0.95, 5), rng.integers(0, 2, 5).astype(float)
        A = rng.dirichlet(np.ones(5), size=3)
        _, g = ranker_loss(s, y, A, 0.3)
        h = 1e-6
        for j in range(5):
            e = np.zeros(5)
            e[j] = h
            fd = (ranker_loss(s + e, y, A, 0.3)[0] - ranker_loss(s - e, y, A, 0.3)[0]) / (2 * h)
            assert g["scores"][j] == pytest.approx(fd, rel=1e-6)
        E = np.zeros_like(A)
        E[1, 2] = h
        fd = (ranker_loss(s, y, A + E, 0.3)[0] - ranker_loss(s, y, A - E, 0.3)[0]) / (2 * h)
        assert g["A"][1, 2] == pytest.approx(fd, rel=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 6))
    def test_diversity_nonnegative(self, seed, heads, n):
        A = np.random.default_rng(seed).dirichlet(np.ones(n), size=heads)
        assert diversity_loss(A) >= 0

    def test_lambda_zero_contributes_nothing(self):
        m = tiny(3, lam=0.0)
        rng = np.random.default_rng(1)
        res = ranker_loss_and_grads(rng.normal(size=(4, 6)), rng.normal(size=5), [1, 0, 0, 1], m)
        assert res.loss == res.bce
        m2 = tiny(3, lam=0.0)
        m2.params["cross.Wq"] += 1.0  # only reaches the loss through the diversity term
        res2 = ranker_loss_and_grads(rng.normal(size=(4, 6)), rng.normal(size=5), [1, 0, 0, 1], m2)
        assert not np.any(res2.grads["cross.Wq"]) and not np.any(res2.grads["text_proj.W"])

    def test_full_gradient_small_model(self):
        m = tiny(11)
        rng = np.random.default_rng(12)
        img, txt = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 5))
        y = np.array([[1, 0, 1], [0, 0, 1]])
        assert fd_check(m, img, txt, y) < 1e-4


class TestTopK:
    def test_example(self):
        assert select_top_k([0.1, 0.9, 0.5], 2).selected == (1, 2)

    def test_ties(self):
        assert select_top_k([0.3, 0.3, 0.3], 2).selected == (0, 1)

    def test_clamp(self):
        r = select_top_k([0.2, 0.1], 5)
        assert r.selected == (0, 1) and r.clamped

    def test_bad_k(self):
        with pytest.raises(ContractError):
            select_top_k([0.1], 0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 4).map(lambda v: v / 4), min_size=1, max_size=20), st.integers(1, 25))
    def test_monotone_invariance(self, scores, k):
        a = select_top_k(scores, k).selected
        b = select_top_k([math.exp(3 * s) - 7 for s in scores], k).selected
        assert a == b


class TestTraining:
    def item(self, seed, n=5):
        rng = np.random.default_rng(seed)
        y = np.zeros(n)
        y[rng.integers(n)] = 1
        frames = rng.normal(size=(n, 6))
        frames[y > 0] += 3.0
        return RankerItem(frames, rng.normal(size=5), y)

    def test_memorises_single_item(self):
        it = self.item(0)
        res = train_ranker([it], TINY, TrainConfig(epochs=400, lr=1e-2, batch_size=1))
        final = ranker_loss_and_grads(it.frames, it.text, it.labels, res.model, want_grads=False)
        assert final.loss == pytest.approx(res.curve[-1]["loss"], rel=1e-12)
        assert final.loss < 0.05

    def test_same_seed_same_hash(self):
        items = [self.item(i) for i in range(3)]
        a = train_ranker(items, TINY, TrainConfig(epochs=5, lr=1e-2, seed=4))
        b = train_ranker(items, TINY, TrainConfig(epochs=5, lr=1e-2, seed=4))
        assert a.model.param_hash == b.model.param_hash and a.curve == b.curve

    def test_item_without_positive(self):
        it = self.item(0)
        with pytest.raises(ContractError):
            train_ranker([RankerItem(it.frames, it.text, np.zeros(5))], TINY, TrainConfig(epochs=1))

    def test_rank_frames_uses_model(self):
        m = tiny(0)
        r = rank_frames(np.random.default_rng(0).normal(size=(4, 6)), np.zeros(5), m, 2)
        assert len(r.selected) == 2 and all(0 < s < 1 for s in r.scores)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = tiny(9)
        digest = save_checkpoint(m, tmp_path / "m.npz")
        back = load_checkpoint(tmp_path / "m.npz")
        assert back.param_hash == digest == m.param_hash and back.config == m.config

    def test_tamper_detected(self, tmp_path):
        m = tiny(9)
        save_checkpoint(m, tmp_path / "m.npz")
        with np.load(tmp_path / "m.npz") as z:
            arrays = {k: z[k] for k in z.files}
        arrays["score.W"] = arrays["score.W"] + 1
        np.savez(tmp_path / "bad.npz", **arrays)
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "bad.npz")

    def test_not_a_checkpoint(self, tmp_path):
        np.savez(tmp_path / "x.npz", a=np.zeros(2))
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "x.npz")
