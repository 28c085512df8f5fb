from itertools import combinations

import numpy as np
import pytest

from duotrack.aggregation import (
    aggregate,
    init_cam,
    init_router,
    route,
    select_experts,
    select_fixed_interval,
    select_manual,
)
from duotrack.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestRoute:
    def test_zero_features_zero_bias_zero_logits(self, rng):
        r = init_router(rng, 4, 8)
        feats = [Tensor(np.zeros((5, 8))) for _ in range(4)]
        s = route(feats, r)
        np.testing.assert_array_equal(s.data, np.zeros(4))

    def test_token_permutation_invariance(self, rng):
        r = init_router(rng, 3, 8)
        feats = [rng.standard_normal((6, 8)) for _ in range(3)]
        base = route([Tensor(f) for f in feats], r).data
        perm = rng.permutation(6)
        shuffled = route([Tensor(f[perm]) for f in feats], r).data
        np.testing.assert_allclose(base, shuffled, atol=1e-12)

    def test_straight_line_reference(self, rng):
        depth, c, n = 4, 6, 5
        r = init_router(rng, depth, c)
        feats = [rng.standard_normal((n, c)) for _ in range(depth)]
        got = route([Tensor(f) for f in feats], r).data
        pooled = np.concatenate([f.mean(axis=0) for f in feats])
        hidden = pooled @ r.w1.data + r.b1.data
        t = np.tanh(np.sqrt(2 / np.pi) * (hidden + 0.044715 * hidden**3))
        hidden = 0.5 * hidden * (1 + t)
        ref = hidden @ r.w2.data + r.b2.data
        np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-8)

    def test_wrong_layer_count(self, rng):
        r = init_router(rng, 4, 8)
        with pytest.raises(ValueError):
            route([Tensor(np.zeros((5, 8)))] * 3, r)


def brute_force_select(scores, k):
    """Max-sum subset containing {1, L}, lexicographically smallest on ties."""
    depth = len(scores)
    best = None
    for middle in combinations(range(2, depth), k - 2):
        cand = (1,) + middle + (depth,)
        total = sum(scores[i - 1] for i in middle)
        key = (-total, cand)
        if best is None or key < best[0]:
            best = (key, cand)
    return list(best[1])


class TestSelect:
    def test_descending_scores(self):
        s = np.array([0.0, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, -5.0])
        assert select_experts(s, 6) == [1, 2, 3, 4, 5, 12]

    def test_all_equal_tie_break(self):
        assert select_experts(np.zeros(12), 6) == [1, 2, 3, 4, 5, 12]

    def test_endpoints_forced_even_with_low_scores(self, rng):
        s = rng.standard_normal(12)
        s[0] = -100.0
        s[-1] = -100.0
        sel = select_experts(s, 4)
        assert sel[0] == 1 and sel[-1] == 12 and len(sel) == 4

    def test_shift_and_monotone_invariance(self, rng):
        for _ in range(200):
            depth = int(rng.integers(4, 13))
            k = int(rng.integers(2, depth + 1))
            s = rng.standard_normal(depth)
            base = select_experts(s, k)
            assert base == select_experts(s + 123.4, k)
            assert base == select_experts(np.exp(s), k)
            assert base == select_experts(3 * s + 1, k)

    def test_brute_force_exhaustive_depth6(self, rng):
        for _ in range(300):
            s = rng.integers(-3, 4, size=6).astype(float)  # integer ties are common
            for k in range(2, 7):
                assert select_experts(s, k) == brute_force_select(s, k)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            select_experts(np.zeros(6), 1)
        with pytest.raises(ValueError):
            select_experts(np.zeros(6), 7)

    def test_ablation_presets(self):
        assert select_fixed_interval(12, 2) == [2, 4, 6, 8, 10, 12]
        assert select_manual(12, [1, 3, 6, 9, 12]) == [1, 3, 6, 9, 12]
        with pytest.raises(ValueError):
            select_manual(12, [0, 3])


class TestAggregate:
    def test_singleton_unit_weights(self, rng):
        depth, c, n = 4, 6, 5
        cam = init_cam(rng, depth, c, 2)
        cam.mix_weights.data = np.ones((depth, c))
        feats = [Tensor(rng.standard_normal((n, c))) for _ in range(depth)]
        got = aggregate(feats, [3], cam).data
        ref = feats[2].data @ cam.experts[2].data
        np.testing.assert_allclose(got, ref, rtol=1e-6)

    def test_zero_weights_zero_output(self, rng):
        cam = init_cam(rng, 4, 6, 2)
        cam.mix_weights.data = np.zeros((4, 6))
        feats = [Tensor(rng.standard_normal((5, 6))) for _ in range(4)]
        np.testing.assert_array_equal(aggregate(feats, [1, 4], cam).data, np.zeros((5, 6)))

    def test_loop_accumulate_oracle(self, rng):
        depth, c, n = 8, 6, 7
        cam = init_cam(rng, depth, c, 6)
        cam.mix_weights.data = rng.standard_normal((depth, c))
        feats = [rng.standard_normal((n, c)) for _ in range(depth)]
        selected = sorted(rng.choice(np.arange(1, depth + 1), size=6, replace=False))
        got = aggregate([Tensor(f) for f in feats], [int(v) for v in selected], cam).data
        ref = np.zeros((n, c))
        for layer in selected:
            ref += cam.mix_weights.data[layer - 1] * (feats[layer - 1] @ cam.experts[layer - 1].data)
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-8)

    def test_linearity(self, rng):
        cam = init_cam(rng, 3, 4, 2)
        f = [rng.standard_normal((5, 4)) for _ in range(3)]
        g = [rng.standard_normal((5, 4)) for _ in range(3)]
        sel = [1, 3]
        alpha, beta = 2.5, -1.25
        mixed = [Tensor(alpha * a + beta * b) for a, b in zip(f, g)]
        lhs = aggregate(mixed, sel, cam).data
        rhs = alpha * aggregate([Tensor(a) for a in f], sel, cam).data + beta * aggregate(
            [Tensor(b) for b in g], sel, cam
        ).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-8)

    def test_empty_selection_rejected(self, rng):
        cam = init_cam(rng, 3, 4, 2)
        with pytest.raises(ValueError):
            aggregate([Tensor(np.zeros((2, 4)))] * 3, [], cam)
