import math

import numpy as np
import pytest

from sfl_lab.models import (Batch, ConstantsUnavailable, SplitLogistic, SplitMLP, SplitParams, SplitRidge,
                            client_backward, client_forward, convexity_constants, extreme_eigenvalues,
                            full_grad, full_loss, power_iteration, server_loss_and_grads, split_grad,
                            split_step)
from sfl_lab.numkit import ShapeError, derive_stream

from conftest import fd_gradient


def _scalar_tanh_layer(W, b, h):
    # plain loops, independent of the vectorized code
    out = []
    for row in range(len(W)):
        z = b[row]
        for col in range(len(h)):
            z += W[row][col] * h[col]
        out.append(math.tanh(z))
    return out


def _random_case(kind, rng, n=7):
    if kind == "ridge":
        obj = SplitRidge(5, 2, lam=0.3)
        y = rng.normal(n)
    elif kind == "logistic":
        obj = SplitLogistic(5, 2, lam=0.3)
        y = (rng.random(n) > 0.5).astype(float)
    else:
        obj = SplitMLP([5, 4, 3, 3], 2, lam=0.3)
        y = rng.integers(3, n).astype(float)
    X = rng.normal((n, 5))
    return obj, Batch(X, y)


class TestLinearSplit:
    def test_activation_is_partial_score(self):
        obj = SplitRidge(3, 2)
        act = obj.client_forward(np.array([1.0, 2.0]), Batch(np.array([[3.0, 4.0, 9.0]]), np.array([0.0])))
        assert act[0, 0] == 11.0

    def test_zero_client_block_zero_score(self):
        obj = SplitLogistic(4, 2)
        act = obj.client_forward(np.zeros(2), Batch(np.ones((3, 4)), np.zeros(3)))
        assert np.all(act[:, 0] == 0.0)

    def test_ridge_zero_everything(self):
        obj = SplitRidge(3, 1)
        b = Batch(np.zeros((2, 3)), np.zeros(2))
        act = obj.client_forward(np.zeros(1), b)
        loss, g_s, cut = obj.server_loss_and_grads(np.zeros(2), act, b)
        assert loss == 0.0 and not g_s.any() and not cut.any()

    def test_logistic_cut_grad_at_zero(self):
        obj = SplitLogistic(3, 1)
        y = np.array([0.0, 1.0, 1.0, 0.0])
        b = Batch(np.arange(12.0).reshape(4, 3), y)
        act = obj.client_forward(np.zeros(1), b)
        _, _, cut = obj.server_loss_and_grads(np.zeros(2), act, b)
        assert np.allclose(cut[:, 0], (0.5 - y) / 4, rtol=0, atol=1e-15)

    def test_zero_cut_grad_zero_client_grad(self):
        obj = SplitRidge(4, 2, lam=0.0)
        b = Batch(np.ones((3, 4)), np.zeros(3))
        assert not obj.client_backward(np.ones(2), b, np.zeros((3, 3))).any()

    @pytest.mark.parametrize("cls", [SplitRidge, SplitLogistic])
    def test_split_equals_monolithic_exactly(self, cls, rng):
        obj = cls(6, 3, lam=0.2)
        for _ in range(20):
            x = obj.init_params(rng, 1.0)
            b = Batch(rng.normal((5, 6)), (rng.random(5) > 0.5).astype(float))
            loss, g_c, g_s, _, _ = split_step(obj, x.client, x.server, b)
            mono_loss, mono = obj.loss_and_grad(x, b)
            # the client's L2 term is charged on the client side, not in the server loss
            assert loss + 0.5 * obj.lam * float(x.client @ x.client) == pytest.approx(mono_loss, rel=1e-14)
            assert np.array_equal(np.concatenate([g_c, g_s]), mono)

    def test_shape_errors(self):
        obj = SplitRidge(4, 2)
        with pytest.raises(ShapeError):
            obj.client_forward(np.zeros(3), Batch(np.ones((2, 4)), np.zeros(2)))
        with pytest.raises((ShapeError, ValueError)):
            obj.client_forward(np.zeros(2), Batch(np.ones((2, 5)), np.zeros(2)))

    def test_bad_cut(self):
        with pytest.raises(ValueError):
            SplitRidge(3, 3)

    def test_module_level_wrappers(self, rng):
        obj, b = _random_case("ridge", rng)
        x = obj.init_params(rng, 1.0)
        act = client_forward(obj, x.client, b)
        _, g_s, cut = server_loss_and_grads(obj, x.server, act, b)
        g_c = client_backward(obj, x.client, b, cut)
        assert np.array_equal(np.concatenate([g_c, g_s]), split_grad(obj, x, b))


class TestGradients:
    @pytest.mark.parametrize("kind", ["ridge", "logistic", "mlp"])
    def test_finite_differences(self, kind):
        rng = derive_stream(7, "fd", ["ridge", "logistic", "mlp"].index(kind))
        obj, b = _random_case(kind, rng)
        worst = 0.0
        for _ in range(50):
            x = obj.init_params(rng, 0.7)
            k = x.client.size

            def f(w):
                return obj.loss_and_grad(SplitParams.from_flat(w, k), b)[0]
            g = split_grad(obj, x, b)
            fd = fd_gradient(f, x.concat())
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
        assert worst < 1e-5

    def test_mlp_split_matches_monolithic(self, rng):
        obj, b = _random_case("mlp", rng)
        for _ in range(20):
            x = obj.init_params(rng, 0.7)
            mono = obj.loss_and_grad(x, b)[1]
            assert np.linalg.norm(split_grad(obj, x, b) - mono) / np.linalg.norm(mono) < 1e-12

    def test_singleton_average_is_full_grad(self, rng):
        obj = SplitLogistic(4, 2, lam=0.1)
        X = rng.normal((9, 4))
        y = (rng.random(9) > 0.5).astype(float)
        x = obj.init_params(rng, 1.0)
        singles = np.mean([split_grad(obj, x, Batch(X[i:i + 1], y[i:i + 1])) for i in range(9)], axis=0)
        assert np.allclose(singles, full_grad(obj, x, X, y), rtol=0, atol=1e-14)

    def test_logistic_grad_at_zero(self, rng):
        obj = SplitLogistic(4, 2, lam=0.5)
        X = rng.normal((6, 4))
        y = (rng.random(6) > 0.5).astype(float)
        expect = -np.mean((y - 0.5)[:, None] * X, axis=0)
        assert np.allclose(full_grad(obj, obj.init_params(), X, y), expect, atol=1e-15)

    def test_ridge_grad_zero_at_normal_equation_solution(self, rng):
        obj = SplitRidge(5, 2, lam=0.2)
        X = rng.normal((30, 5))
        y = rng.normal(30)
        w = np.linalg.solve(X.T @ X / 30 + 0.2 * np.eye(5), X.T @ y / 30)
        assert np.linalg.norm(full_grad(obj, SplitParams.from_flat(w, 2), X, y)) < 1e-10


class TestMLP:
    def test_golden_activation_matches_scalar_oracle(self):
        obj = SplitMLP([3, 4, 2], 1)
        x = obj.init_params(derive_stream(0, "golden-mlp"), 0.5)
        X = np.array([[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]])
        act = obj.client_forward(x.client, Batch(X, np.array([0.0, 1.0])))
        W = x.client[:12].reshape(4, 3).tolist()
        bias = x.client[12:16].tolist()
        for i in range(2):
            oracle = _scalar_tanh_layer(W, bias, X[i].tolist())
            assert np.allclose(act[i], oracle, rtol=0, atol=1e-15)
        pinned = np.array([[0.5194220941027471, -0.669832491323283, 0.9951730744383193, -0.5293077822190738],
                           [-0.8580131714649364, 0.6297019640747165, 0.04688745286919299, 0.8968258351352778]])
        assert np.allclose(act, pinned, rtol=0, atol=1e-15)

    def test_block_sizes(self):
        obj = SplitMLP([2, 8, 2], 1)
        assert obj.client_size == 2 * 8 + 8 and obj.server_size == 8 * 2 + 2 and obj.cut_width == 8

    def test_init_needs_stream(self):
        with pytest.raises(ValueError):
            SplitMLP([2, 3, 2], 1).init_params()

    def test_bad_cut(self):
        with pytest.raises(ValueError):
            SplitMLP([2, 3, 2], 2)


class TestConstants:
    def test_identity_design(self):
        d = 4
        S, mu = convexity_constants(SplitRidge(d, 2, lam=0.0), np.eye(d))
        assert S == pytest.approx(1 / d, rel=1e-8) and mu == pytest.approx(1 / d, rel=1e-8)

    def test_diagonal_design(self):
        # X^T X / D = diag(1, 4)
        X = np.array([[1.0, 0.0], [0.0, 2.0]]) * math.sqrt(2)
        S, mu = convexity_constants(SplitRidge(2, 1, lam=0.5), X)
        assert S == pytest.approx(4.5, rel=1e-8) and mu == pytest.approx(1.5, rel=1e-8)

    def test_power_iteration_matches_dense(self, rng):
        X = rng.normal((20, 5))
        A = X.T @ X / 20 + 0.1 * np.eye(5)
        ev = np.linalg.eigvalsh(A)
        hi, lo = extreme_eigenvalues(A)
        assert hi == pytest.approx(ev[-1], rel=1e-6) and lo == pytest.approx(ev[0], rel=1e-6)
        assert power_iteration(A) == pytest.approx(ev[-1], rel=1e-6)

    def test_logistic_constants(self, rng):
        X = rng.normal((20, 5))
        S, mu = convexity_constants(SplitLogistic(5, 2, lam=0.3), X)
        assert mu == 0.3
        assert S == pytest.approx(np.linalg.eigvalsh(X.T @ X / 80)[-1] + 0.3, rel=1e-6)

    def test_mlp_unavailable(self):
        with pytest.raises(ConstantsUnavailable):
            convexity_constants(SplitMLP([2, 3, 2], 1), np.ones((3, 2)))

    def test_smoothness_and_strong_convexity_certificates(self, rng):
        obj = SplitRidge(6, 3, lam=0.2)
        X = rng.normal((40, 6))
        y = rng.normal(40)
        S, mu = convexity_constants(obj, X)
        for _ in range(100):
            a, b = obj.init_params(rng, 2.0), obj.init_params(rng, 2.0)
            wa, wb = a.concat(), b.concat()
            ga, gb = full_grad(obj, a, X, y), full_grad(obj, b, X, y)
            dist = np.linalg.norm(wa - wb)
            assert np.linalg.norm(ga - gb) <= S * dist * (1 + 1e-9)
            lower = full_loss(obj, a, X, y) + ga @ (wb - wa) + 0.5 * mu * dist ** 2
            assert full_loss(obj, b, X, y) >= lower - 1e-10
