import math

import numpy as np
import pytest

from duotrack.gradcheck import elementwise_check
from duotrack.nn import bilinear_sample, conv1d_depthwise, conv2d, layer_norm, softmax
from duotrack.tensor import (
    Tape,
    Tensor,
    backward,
    gelu,
    precision,
    silu,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestMatmul:
    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 5)))
        out = Tensor(np.eye(3)) @ x
        np.testing.assert_allclose(out.data, x.data)

    def test_hand_case(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[0.0], [1.0]])
        np.testing.assert_array_equal(out.data, [[2.0], [4.0]])

    def test_triple_loop_oracle(self, rng):
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        ref = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    ref[i, j] += a[i, k] * b[k, j]
        got = (Tensor(a) @ Tensor(b)).data
        np.testing.assert_allclose(got, ref, rtol=1e-5)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 5)))

    def test_random_shapes_vs_oracle(self, rng):
        for _ in range(100):
            m, k, n = rng.integers(1, 10, size=3)
            a = rng.standard_normal((m, k)).astype(np.float32)
            b = rng.standard_normal((k, n)).astype(np.float32)
            ref = np.einsum("mk,kn->mn", a.astype(np.float64), b.astype(np.float64))
            got = (Tensor(a) @ Tensor(b)).data
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)


class TestSoftmax:
    def test_constant_row_uniform(self):
        out = softmax(Tensor(np.full((2, 5), 3.0)), axis=1)
        np.testing.assert_allclose(out.data, 0.2, atol=1e-7)

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((4, 6))
        a = softmax(Tensor(x), axis=1).data
        b = softmax(Tensor(x + 17.5), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_analytic(self):
        out = softmax(Tensor([[0.0, math.log(3.0)]]), axis=1)
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-7)

    def test_rows_sum_to_one(self, rng):
        for axis in (0, 1):
            s = softmax(Tensor(rng.standard_normal((5, 7)) * 30), axis=axis).data
            np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)
            assert (s >= 0).all()

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            softmax(Tensor(np.zeros((2, 2))), axis=5)


class TestLayerNorm:
    def test_constant_row_gives_bias(self):
        x = Tensor(np.full((2, 8), 4.2))
        out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 8)))

    def test_row_mean_is_bias_mean(self, rng):
        x = Tensor(rng.standard_normal((3, 16)))
        bias = rng.standard_normal(16)
        out = layer_norm(x, Tensor(np.full(16, 2.0)), Tensor(bias))
        np.testing.assert_allclose(out.data.mean(axis=1), bias.mean(), atol=1e-5)

    def test_two_pass_oracle(self, rng):
        x = rng.standard_normal((5, 12))
        gain = rng.standard_normal(12)
        bias = rng.standard_normal(12)
        ref = np.empty_like(x)
        for i in range(5):
            mu = x[i].mean()
            var = ((x[i] - mu) ** 2).mean()
            ref[i] = (x[i] - mu) / np.sqrt(var + 1e-5) * gain + bias
        got = layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data
        np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-6)


class TestActivations:
    def test_zero(self):
        assert silu(Tensor(0.0)).item() == 0.0
        assert gelu(Tensor(0.0)).item() == 0.0

    def test_silu_asymptote(self):
        assert abs(silu(Tensor(20.0)).item() - 20.0) < 1e-6

    def test_gelu_vs_erf_oracle(self):
        xs = np.linspace(-4, 4, 81)
        exact = 0.5 * xs * (1 + np.array([math.erf(v / math.sqrt(2)) for v in xs]))
        got = gelu(Tensor(xs)).data
        assert np.abs(got - exact).max() < 1e-3


class TestConv2d:
    def test_depthwise_delta_identity(self, rng):
        x = rng.standard_normal((3, 6, 6))
        k = np.zeros((3, 3, 3))
        k[:, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(k), mode="depthwise", padding=1)
        np.testing.assert_allclose(out.data, x)

    def test_pointwise_identity(self, rng):
        x = rng.standard_normal((4, 5, 5))
        out = conv2d(Tensor(x), Tensor(np.eye(4)), mode="pointwise")
        np.testing.assert_allclose(out.data, x)

    def test_dense_vs_loop_oracle(self, rng):
        for _ in range(100):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            h = int(rng.integers(3, 8))
            w = int(rng.integers(3, 8))
            kh = int(rng.choice([1, 3]))
            x = rng.standard_normal((c_in, h, w)).astype(np.float32)
            k = rng.standard_normal((c_out, c_in, kh, kh)).astype(np.float32)
            pad = kh // 2
            xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
            ref = np.zeros((c_out, h, w))
            for o in range(c_out):
                for i in range(h):
                    for j in range(w):
                        ref[o, i, j] = (k[o].astype(np.float64) * xp[:, i : i + kh, j : j + kh]).sum()
            got = conv2d(Tensor(x), Tensor(k), mode="dense", padding=pad).data
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((2, 5, 3, 3))), mode="dense")


class TestConv1d:
    def test_width1_identity(self, rng):
        x = rng.standard_normal((6, 3))
        out = conv1d_depthwise(Tensor(x), Tensor(np.ones((1, 3))))
        np.testing.assert_allclose(out.data, x)

    def test_current_tap_only(self, rng):
        x = rng.standard_normal((6, 3))
        k = np.stack([np.zeros(3), np.ones(3)])
        out = conv1d_depthwise(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data, x)

    def test_causal(self, rng):
        # output at t must not change when future inputs change
        x = rng.standard_normal((8, 2))
        k = rng.standard_normal((4, 2))
        base = conv1d_depthwise(Tensor(x), Tensor(k)).data
        x2 = x.copy()
        x2[5:] += 10.0
        moved = conv1d_depthwise(Tensor(x2), Tensor(k)).data
        np.testing.assert_array_equal(base[:5], moved[:5])

    def test_width4_vs_loop(self, rng):
        for _ in range(100):
            length = int(rng.integers(4, 16))
            dim = int(rng.integers(1, 5))
            x = rng.standard_normal((length, dim)).astype(np.float32)
            k = rng.standard_normal((4, dim)).astype(np.float32)
            ref = np.zeros((length, dim))
            for t in range(length):
                for tap in range(4):
                    src = t - 3 + tap
                    if src >= 0:
                        ref[t] += k[tap].astype(np.float64) * x[src]
            got = conv1d_depthwise(Tensor(x), Tensor(k)).data
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)


class TestBilinear:
    def test_integer_point_exact(self, rng):
        f = rng.standard_normal((4, 5, 2)).astype(np.float32)
        pts = np.array([[2.0, 3.0], [0.0, 0.0], [3.0, 4.0]])
        out = bilinear_sample(Tensor(f), Tensor(pts)).data
        assert np.array_equal(out[0], f[2, 3])
        assert np.array_equal(out[1], f[0, 0])
        assert np.array_equal(out[2], f[3, 4])

    def test_midpoint_mean(self, rng):
        f = rng.standard_normal((3, 3, 1))
        out = bilinear_sample(Tensor(f), Tensor(np.array([[0.5, 0.5]]))).data
        np.testing.assert_allclose(out[0, 0], f[0:2, 0:2, 0].mean(), rtol=1e-6)

    def test_far_outside_clamps_to_corner(self, rng):
        f = rng.standard_normal((4, 4, 3)).astype(np.float32)
        pts = np.array([[-100.0, -50.0], [99.0, 99.0], [-5.0, 99.0]])
        out = bilinear_sample(Tensor(f), Tensor(pts)).data
        assert np.array_equal(out[0], f[0, 0])
        assert np.array_equal(out[1], f[3, 3])
        assert np.array_equal(out[2], f[0, 3])

    def test_vs_clamp_then_interpolate_oracle(self, rng):
        for _ in range(100):
            h = int(rng.integers(2, 8))
            w = int(rng.integers(2, 8))
            f = rng.standard_normal((h, w, 2))
            pts = rng.uniform(-3, max(h, w) + 3, size=(6, 2))
            got = bilinear_sample(Tensor(f), Tensor(pts)).data
            for n in range(6):
                y = min(max(pts[n, 0], 0), h - 1)
                x = min(max(pts[n, 1], 0), w - 1)
                i0 = min(int(np.floor(y)), h - 2)
                j0 = min(int(np.floor(x)), w - 2)
                fy, fx = y - i0, x - j0
                ref = (
                    f[i0, j0] * (1 - fy) * (1 - fx)
                    + f[i0, j0 + 1] * (1 - fy) * fx
                    + f[i0 + 1, j0] * fy * (1 - fx)
                    + f[i0 + 1, j0 + 1] * fy * fx
                )
                np.testing.assert_allclose(got[n], ref, rtol=1e-5, atol=1e-7)


class TestBackward:
    def test_sum_grad_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            tape.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_grad(self, rng):
        x = Tensor(rng.standard_normal((5,)), requires_grad=True)
        with Tape() as tape:
            tape.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)

    def test_off_path_leaf_gets_zero(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        y = Tensor(rng.standard_normal(4), requires_grad=True)
        with Tape() as tape:
            _unused = y * 2.0
            tape.backward((x * 3.0).sum())
        np.testing.assert_array_equal(y.grad, np.zeros(4))

    def test_loss_must_be_scalar(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        with Tape() as tape:
            with pytest.raises(ValueError, match="scalar"):
                tape.backward(x * 1.0)

    def test_loss_not_on_tape(self, rng):
        x = Tensor(np.array(1.0), requires_grad=True)
        with Tape() as tape:
            with pytest.raises(ValueError, match="tape"):
                tape.backward(x)

    def test_backward_requires_active_tape(self):
        with pytest.raises(RuntimeError):
            backward(Tensor(np.array(0.0)))

    def test_reverse_order_accumulation(self, rng):
        # fan-out: x used twice; grads must accumulate
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        with Tape() as tape:
            tape.backward((x * x + x * 2.0).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data + 2.0, rtol=1e-6)


@pytest.mark.parametrize(
    "name",
    ["matmul", "softmax", "layer_norm", "silu", "gelu", "conv2d", "conv1d", "bilinear", "scan_inputs"],
)
def test_primitive_elementwise_gradcheck(name, rng):
    """Every differentiable primitive against full elementwise central FD."""
    with precision("f64"):
        probe = {}

        if name == "matmul":
            a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
            w = rng.standard_normal((3, 2))
            leaves = [a, b]
            build = lambda: ((a @ b) * Tensor(w)).sum()
        elif name == "softmax":
            x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
            w = rng.standard_normal((3, 5))
            leaves = [x]
            build = lambda: (softmax(x, axis=1) * Tensor(w)).sum()
        elif name == "layer_norm":
            x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
            g = Tensor(rng.standard_normal(6), requires_grad=True)
            b = Tensor(rng.standard_normal(6), requires_grad=True)
            w = rng.standard_normal((3, 6))
            leaves = [x, g, b]
            build = lambda: (layer_norm(x, g, b) * Tensor(w)).sum()
        elif name in ("silu", "gelu"):
            fn = silu if name == "silu" else gelu
            x = Tensor(rng.standard_normal(10), requires_grad=True)
            w = rng.standard_normal(10)
            leaves = [x]
            build = lambda: (fn(x) * Tensor(w)).sum()
        elif name == "conv2d":
            x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
            k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
            bias = Tensor(rng.standard_normal(3), requires_grad=True)
            w = rng.standard_normal((3, 4, 4))
            leaves = [x, k, bias]
            build = lambda: (conv2d(x, k, bias, mode="dense", padding=1) * Tensor(w)).sum()
        elif name == "conv1d":
            x = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
            k = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
            w = rng.standard_normal((6, 3))
            leaves = [x, k]
            build = lambda: (conv1d_depthwise(x, k) * Tensor(w)).sum()
        elif name == "bilinear":
            f = Tensor(rng.standard_normal((4, 4, 2)), requires_grad=True)
            # interior points away from lattice kinks
            pts = Tensor(rng.uniform(0.2, 2.8, size=(5, 2)).round(1) + 0.13, requires_grad=True)
            w = rng.standard_normal((5, 2))
            leaves = [f, pts]
            build = lambda: (bilinear_sample(f, pts) * Tensor(w)).sum()
        else:  # scan_inputs: raw recurrence wrt all six inputs
            from duotrack.ssm import scan_recurrence

            length, dim, state = 5, 3, 4
            x = Tensor(rng.standard_normal((length, dim)), requires_grad=True)
            delta = Tensor(rng.uniform(0.05, 0.5, (length, dim)), requires_grad=True)
            a = Tensor(-rng.uniform(0.2, 2.0, (dim, state)), requires_grad=True)
            b = Tensor(rng.standard_normal((length, state)), requires_grad=True)
            c = Tensor(rng.standard_normal((length, state)), requires_grad=True)
            skip = Tensor(rng.standard_normal(dim), requires_grad=True)
            w = rng.standard_normal((length, dim))
            leaves = [x, delta, a, b, c, skip]
            build = lambda: (scan_recurrence(x, delta, a, b, c, skip) * Tensor(w)).sum()

        err = elementwise_check(build, leaves)
        assert err <= 1e-4, f"{name}: rel err {err:.2e}"


def test_finite_outputs_on_finite_inputs(rng):
    x = Tensor(rng.standard_normal((20,)) * 50)
    for fn in (silu, gelu):
        assert np.isfinite(fn(x).data).all()
    s = softmax(Tensor(rng.standard_normal((4, 4)) * 200), axis=1)
    assert np.isfinite(s.data).all()


def test_determinism_across_runs(rng):
    x = rng.standard_normal((16, 16))
    w = rng.standard_normal((16, 16))
    one = ((Tensor(x) @ Tensor(w)) * 2.0 + 1.0).data
    two = ((Tensor(x) @ Tensor(w)) * 2.0 + 1.0).data
    assert np.array_equal(one, two)
