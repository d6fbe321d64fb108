from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advisum.assets import FrameSequence
from advisum.errors import BackendError, ContractError, DimensionError, InsufficientFramesError
from advisum.keyframes import FarnebackFlow, KeyframeSet, ProxyFlow, flow_magnitude, select_keyframes


def gray(v, shape=(16, 16)):
    return np.full((*shape, 3), v, np.uint8)


def seq_of(images, fps=1.0):
    return FrameSequence("x", [i / fps for i in range(len(images))], images, fps)


def proxy_oracle(a, b):
    h, w = a.shape[:2]
    total = 0.0
    for y in range(h):
        for x in range(w):
            la = 0.299 * a[y, x, 0] + 0.587 * a[y, x, 1] + 0.114 * a[y, x, 2]
            lb = 0.299 * b[y, x, 0] + 0.587 * b[y, x, 1] + 0.114 * b[y, x, 2]
            total += abs(lb - la) / 255.0
    return total / (h * w)


def checkerboard(n=16, cell=2):
    yy, xx = np.mgrid[:n, :n]
    board = (((yy // cell) + (xx // cell)) % 2 * 255).astype(np.uint8)
    return np.repeat(board[..., None], 3, axis=2)


class TestFlowMagnitude:
    def test_identical_zero(self):
        a = np.random.default_rng(0).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        assert flow_magnitude(a, a) == 0.0

    def test_shifted_square_matches_oracle(self):
        a = np.zeros((8, 8, 3), np.uint8)
        b = np.zeros((8, 8, 3), np.uint8)
        a[2:6, 1:5] = 255
        b[2:6, 3:7] = 255
        got = flow_magnitude(a, b)
        assert got == pytest.approx(proxy_oracle(a, b), abs=1e-12)
        assert got == pytest.approx(16 / 64, abs=1e-12)  # 8 pixels appear, 8 vanish

    def test_inverted_checkerboard_beats_one_pixel_shift(self):
        board = checkerboard()
        inverted = 255 - board
        shifted = np.roll(board, 1, axis=1)
        assert flow_magnitude(board, inverted) > flow_magnitude(board, shifted)

    def test_field_norm_path_agrees_with_fast_path(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 256, (10, 12, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (10, 12, 3), dtype=np.uint8)

        class FieldOnly:
            field = ProxyFlow().field

        assert flow_magnitude(a, b, FieldOnly()) == pytest.approx(flow_magnitude(a, b), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            flow_magnitude(gray(0, (4, 4)), gray(0, (4, 5)))

    def test_estimator_failure(self):
        class Broken:
            def field(self, a, b):
                raise RuntimeError("weights missing")

        with pytest.raises(BackendError):
            flow_magnitude(gray(0), gray(1), Broken())

    def test_farneback_sees_translation(self):
        rng = np.random.default_rng(2)
        base = (rng.random((48, 48)) * 255).astype(np.uint8)
        import cv2

        base = cv2.GaussianBlur(base, (7, 7), 2)
        a = np.repeat(base[..., None], 3, axis=2)
        b = np.roll(a, 2, axis=1)
        assert flow_magnitude(a, b, FarnebackFlow()) > flow_magnitude(a, a, FarnebackFlow()) + 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 4))
    def test_proxy_scales_linearly(self, seed, c):
        rng = np.random.default_rng(seed)
        base = rng.integers(0, 100, (6, 6, 3)).astype(np.uint8)
        d = rng.integers(0, 30, (6, 6, 3)).astype(np.uint8)
        m1 = flow_magnitude(base, base + d)
        mc = flow_magnitude(base, (base + c * d).astype(np.uint8))
        assert mc == pytest.approx(c * m1, rel=1e-9, abs=1e-12)


class TestSelectKeyframes:
    def test_static_sequence_takes_earliest(self):
        ks = select_keyframes(seq_of([gray(50)] * 10), 3)
        assert ks.indices == [1, 2, 3]

    def test_planted_shifts(self):
        imgs = [gray(100) for _ in range(10)]
        for i in range(4, 10):
            imgs[i] = gray(180)
        for i in range(7, 10):
            imgs[i] = gray(20)
        ks = select_keyframes(seq_of(imgs), 2)
        assert ks.indices == [4, 7]

    def test_budget_beyond_length(self):
        ks = select_keyframes(seq_of([gray(i * 10) for i in range(10)]), 100)
        assert ks.indices == list(range(1, 10))

    def test_bad_budget(self):
        with pytest.raises(ContractError):
            select_keyframes(seq_of([gray(0), gray(1)]), 0)

    def test_too_few_frames(self):
        with pytest.raises(InsufficientFramesError):
            select_keyframes(seq_of([gray(0)]), 2)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=2, max_size=50), st.integers(1, 60))
    def test_equals_brute_force(self, levels, m):
        imgs = [gray(v * 40, (4, 4)) for v in levels]
        ks = select_keyframes(seq_of(imgs), m)
        mags = [(abs(levels[i] - levels[i - 1]) * 40 / 255.0, i) for i in range(1, len(levels))]
        best = sorted(mags, key=lambda t: (-round(t[0], 9), t[1]))[:m]
        assert ks.indices == sorted(i for _, i in best)
        ts = [s.timestamp_s for s in ks.selected]
        assert ts == sorted(ts)

    def test_round_trip(self):
        ks = select_keyframes(seq_of([gray(i * 7) for i in range(6)]), 3)
        assert KeyframeSet.from_dict(ks.to_dict()) == ks
