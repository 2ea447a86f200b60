import numpy as np
import pytest

from lgflow.flow import (
    CouplingLayer,
    alternating_masks,
    build_flow,
    context_windows,
    coupling_forward,
    coupling_inverse,
    generate,
    normalize,
    normalize_backward,
    normalize_cached,
)
from lgflow.nncore import Mlp


def random_flow(dim, k, seed, n_layers=4, hidden=8, scale=0.5):
    """Flow with every parameter randomised (no zero-init)."""
    flow = build_flow(dim, k, n_layers=n_layers, hidden_size=hidden, seed=seed, zero_init=False)
    rng = np.random.default_rng(seed + 77)
    for p in flow.params():
        p[:] = rng.normal(scale=scale, size=p.shape)
    return flow


def fd_jacobian(flow, x, ctx, h=1e-6):
    D = len(x)
    J = np.empty((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = h
        J[:, j] = (normalize(flow, x + e, ctx)[0] - normalize(flow, x - e, ctx)[0]) / (2 * h)
    return J


class TestMasks:
    def test_alternating(self):
        m = alternating_masks(4, 3)
        assert m[0].tolist() == [1, 0, 1, 0]
        assert m[1].tolist() == [0, 1, 0, 1]
        assert m[2].tolist() == [1, 0, 1, 0]

    def test_every_coordinate_transformed(self):
        m = np.stack(alternating_masks(5, 2))
        assert np.all((m == 0).any(axis=0))

    def test_degenerate_mask(self):
        net = Mlp([np.zeros((1, 3))], [np.zeros(1)])
        with pytest.raises(ValueError):
            CouplingLayer(np.array([1, 1]), net, net)


class TestContext:
    def test_time_major_oldest_first(self):
        v = np.arange(12.0).reshape(6, 2)
        ctx = context_windows(v, 2)
        assert ctx.shape == (4, 4)
        # context of t=2 is rows 0 and 1
        assert ctx[0].tolist() == [0.0, 1.0, 2.0, 3.0]
        assert ctx[3].tolist() == v[3:5].ravel().tolist()

    def test_too_short(self):
        with pytest.raises(ValueError):
            context_windows(np.zeros((3, 2)), 3)


class TestBuild:
    def test_identity_at_init(self):
        flow = build_flow(4, 5, seed=3)
        rng = np.random.default_rng(0)
        x, ctx = rng.normal(size=(10, 4)), rng.normal(size=(10, 20))
        z, ld = normalize(flow, x, ctx)
        assert np.array_equal(z, x)
        assert np.array_equal(ld, np.zeros(10))

    def test_univariate_rejected(self):
        with pytest.raises(ValueError):
            build_flow(1, 3)

    def test_net_shapes(self):
        flow = build_flow(4, 3, n_layers=2, hidden_layers=2, hidden_size=16)
        assert flow.layers[0].scale_net.layer_dims == [2 + 12, 16, 16, 2]

    def test_deterministic(self):
        a, b = build_flow(3, 2, seed=9, zero_init=False), build_flow(3, 2, seed=9, zero_init=False)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)


class TestCoupling:
    def test_zero_nets_identity(self):
        flow = build_flow(2, 1, n_layers=1)
        for p in flow.params():
            p[:] = 0.0
        y, ld = coupling_forward(flow.layers[0], np.array([1.0, 2.0]), np.array([0.0, 0.0]))
        assert y.tolist() == [1.0, 2.0] and ld == 0.0

    def test_clamp_example(self):
        # raw scale 0.3 -> 5 tanh(0.06) = 0.299640...
        flow = build_flow(2, 1, n_layers=1)
        layer = flow.layers[0]
        for p in flow.params():
            p[:] = 0.0
        layer.scale_net.biases[-1][:] = 0.3
        y, ld = coupling_forward(layer, np.array([0.0, 1.0]), np.zeros(2))
        assert ld == pytest.approx(5 * np.tanh(0.06), abs=1e-15)
        assert ld == pytest.approx(0.29964, abs=1e-5)
        assert y[1] == pytest.approx(np.exp(5 * np.tanh(0.06)), abs=1e-14)
        assert y[0] == 0.0

    def test_clamp_bounds_logdet(self):
        flow = build_flow(2, 1, n_layers=1)
        layer = flow.layers[0]
        layer.scale_net.biases[-1][:] = 1e6
        _, ld = coupling_forward(layer, np.array([0.3, 1.0]), np.zeros(2))
        assert ld <= layer.clamp

    def test_layer_roundtrip(self):
        flow = random_flow(4, 2, seed=1)
        rng = np.random.default_rng(1)
        x, ctx = rng.normal(size=4), rng.normal(size=8)
        for layer in flow.layers:
            y, ld = coupling_forward(layer, x, ctx)
            xr, ldi = coupling_inverse(layer, y, ctx)
            np.testing.assert_allclose(xr, x, atol=1e-12)
            assert ld + ldi == pytest.approx(0.0, abs=1e-12)

    def test_non_finite_raises(self):
        flow = random_flow(2, 1, seed=0)
        with pytest.raises(FloatingPointError):
            normalize(flow, np.array([np.inf, 0.0]), np.zeros(2))


class TestBijectivity:
    @pytest.mark.parametrize("dim", [2, 3, 4])
    def test_roundtrip_1000_pairs(self, dim):
        k = 3
        worst = 0.0
        for seed in range(10):
            flow = random_flow(dim, k, seed)
            rng = np.random.default_rng(100 + seed)
            x = rng.normal(scale=2.0, size=(100, dim))
            ctx = rng.normal(size=(100, k * dim))
            z, _ = normalize(flow, x, ctx)
            worst = max(worst, np.max(np.abs(generate(flow, z, ctx) - x)))
        assert worst < 1e-10

    def test_generate_then_normalize(self):
        flow = random_flow(4, 2, seed=5)
        rng = np.random.default_rng(5)
        z, ctx = rng.normal(size=(50, 4)), rng.normal(size=(50, 8))
        np.testing.assert_allclose(normalize(flow, generate(flow, z, ctx), ctx)[0], z, atol=1e-10)

    @pytest.mark.parametrize("dim", [2, 4])
    def test_logdet_matches_jacobian(self, dim):
        for seed in range(5):
            flow = random_flow(dim, 2, seed)
            rng = np.random.default_rng(seed)
            x, ctx = rng.normal(size=dim), rng.normal(size=2 * dim)
            _, ld = normalize(flow, x, ctx)
            sign, fd = np.linalg.slogdet(fd_jacobian(flow, x, ctx))
            assert sign > 0
            assert abs(fd - ld) / max(abs(ld), 1e-8) < 1e-5 or abs(fd - ld) < 1e-8

    def test_batch_equals_rows(self):
        flow = random_flow(3, 2, seed=2)
        rng = np.random.default_rng(2)
        x, ctx = rng.normal(size=(7, 3)), rng.normal(size=(7, 6))
        zb, lb = normalize(flow, x, ctx)
        for i in range(7):
            z, l = normalize(flow, x[i], ctx[i])
            np.testing.assert_allclose(z, zb[i], atol=1e-15)
            assert l == pytest.approx(lb[i], abs=1e-14)


class TestContextSensitivity:
    def test_context_changes_output(self):
        flow = random_flow(4, 2, seed=3)
        x = np.ones(4)
        z1, _ = normalize(flow, x, np.zeros(8))
        z2, _ = normalize(flow, x, np.ones(8))
        assert np.max(np.abs(z1 - z2)) > 1e-6

    def test_roundtrip_needs_same_context(self):
        flow = random_flow(4, 2, seed=3)
        x = np.ones(4)
        z, _ = normalize(flow, x, np.zeros(8))
        assert np.max(np.abs(generate(flow, z, np.ones(8)) - x)) > 1e-6


class TestBackward:
    def test_param_gradients(self):
        flow = random_flow(3, 2, seed=4, n_layers=3, hidden=5, scale=0.3)
        rng = np.random.default_rng(4)
        x, ctx = rng.normal(size=(6, 3)), rng.normal(size=(6, 6))
        dz, dl = rng.normal(size=(6, 3)), rng.normal(size=6)

        def f():
            z, ld = normalize(flow, x, ctx)
            return np.sum(dz * z) + np.sum(dl * ld)

        _, _, caches = normalize_cached(flow, x, ctx)
        grads, dx = normalize_backward(flow, caches, dz, dl)
        h = 1e-5
        for p, g in zip(flow.params(), grads):
            assert p.shape == g.shape
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                fp = f()
                p[idx] = old - h
                fm = f()
                p[idx] = old
                num = (fp - fm) / (2 * h)
                assert abs(num - g[idx]) <= 1e-4 * max(abs(num), abs(g[idx]), 1e-6)

    def test_input_gradient(self):
        flow = random_flow(4, 1, seed=6, scale=0.3)
        rng = np.random.default_rng(6)
        x, ctx = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        dz, dl = rng.normal(size=(1, 4)), np.array([0.7])
        _, _, caches = normalize_cached(flow, x, ctx)
        _, dx = normalize_backward(flow, caches, dz, dl)
        h = 1e-6
        for j in range(4):
            e = np.zeros((1, 4))
            e[0, j] = h
            zp, lp = normalize(flow, x + e, ctx)
            zm, lm = normalize(flow, x - e, ctx)
            num = (np.sum(dz * (zp - zm)) + np.sum(dl * (lp - lm))) / (2 * h)
            assert dx[0, j] == pytest.approx(num, rel=1e-5, abs=1e-8)
