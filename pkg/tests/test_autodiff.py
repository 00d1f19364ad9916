import numpy as np
import pytest

from trilift.autodiff import Jet2, Tensor, concat, pad_front, tanh


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_grad(build, *arrays, tol=1e-6):
    """build(*tensors) -> scalar Tensor; compares grads to central differences."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        def f(x, k=k):
            args = [Tensor(arr) for arr in arrays]
            args[k] = Tensor(x)
            return build(*args).item()

        num = numeric_grad(f, a)
        assert t.grad is not None
        err = np.abs(t.grad - num).max()
        scale = max(1.0, np.abs(num).max())
        assert err / scale < tol, f"arg {k}: {err}"


class TestTensorOps:
    def test_add_mul_grad(self):
        rng = np.random.default_rng(0)
        check_grad(lambda a, b: ((a * b + a) * 2.0).sum(),
                   rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))

    def test_broadcast_grads(self):
        rng = np.random.default_rng(1)
        check_grad(lambda a, b: (a * b).sum(),
                   rng.normal(size=(3, 4)), rng.normal(size=(4,)))

    def test_matmul_grad(self):
        rng = np.random.default_rng(2)
        check_grad(lambda a, w: (a @ w).sum(),
                   rng.normal(size=(5, 3)), rng.normal(size=(3, 2)))

    def test_batched_matmul_grad(self):
        rng = np.random.default_rng(3)
        check_grad(lambda a, w: tanh(a @ w).sum(),
                   rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 2)))

    def test_tanh_div_grad(self):
        rng = np.random.default_rng(4)
        check_grad(lambda a, b: (tanh(a) / (b * b + 1.0)).sum(),
                   rng.normal(size=(4,)), rng.normal(size=(4,)))

    def test_getitem_concat_pad(self):
        rng = np.random.default_rng(5)

        def build(a, b):
            c = concat([a[1:], b], axis=0)
            return (pad_front(c, 0, 2) * 3.0).mean()

        check_grad(build, rng.normal(size=(4, 2)), rng.normal(size=(2, 2)))

    def test_mean_reshape_broadcast_to(self):
        rng = np.random.default_rng(6)

        def build(a):
            return (a.reshape(2, 6).broadcast_to((3, 2, 6)) * 0.5).mean()

        check_grad(build, rng.normal(size=(3, 4)))

    def test_numpy_left_operand(self):
        a = np.ones((2, 2))
        t = Tensor(np.full((2, 2), 3.0), requires_grad=True)
        out = (a * t).sum()
        out.backward()
        assert np.allclose(t.grad, np.ones((2, 2)))

    def test_grad_accumulates_over_reuse(self):
        t = Tensor(np.array([2.0]), requires_grad=True)
        out = (t * t + t).sum()
        out.backward()
        assert np.allclose(t.grad, [5.0])

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2).backward()


class TestJet2:
    def test_linear_map_derivatives(self):
        rng = np.random.default_rng(7)
        W = rng.normal(size=(1, 4))
        b = rng.normal(size=4)
        t0 = 0.3
        jet = Jet2(np.array([[t0]]), np.array([[1.0]]), np.array([[0.0]]))
        out = jet.affine(W, b)
        assert np.allclose(out.val, t0 * W[0] + b)
        assert np.allclose(out.d1, W[0])
        assert np.allclose(out.d2, 0.0)

    def test_tanh_at_zero(self):
        jet = Jet2(np.array([0.0]), np.array([1.0]), np.array([0.0])).tanh()
        assert np.allclose(jet.val, 0.0)
        assert np.allclose(jet.d1, 1.0)
        assert np.allclose(jet.d2, 0.0)

    def test_tanh_chain_vs_analytic(self):
        # y(t) = tanh(a t + b): y' = a sech^2, y'' = -2 a^2 tanh sech^2
        a, b, t0 = 1.7, -0.4, 0.25
        z = a * t0 + b
        jet = Jet2(np.array([z]), np.array([a]), np.array([0.0])).tanh()
        y = np.tanh(z)
        assert np.allclose(jet.d1, a * (1 - y * y))
        assert np.allclose(jet.d2, -2 * a * a * y * (1 - y * y))

    def test_mlp_jet_vs_finite_differences(self):
        rng = np.random.default_rng(8)
        Ws = [rng.normal(size=(5, 8)), rng.normal(size=(8, 8)), rng.normal(size=(8, 3))]
        bs = [rng.normal(size=8), rng.normal(size=8), rng.normal(size=3)]
        x = rng.normal(size=4)

        def forward(t):
            h = np.concatenate([x, [t]])
            for W, b in zip(Ws[:-1], bs[:-1]):
                h = np.tanh(h @ W + b)
            return h @ Ws[-1] + bs[-1]

        def forward_jet(t):
            val = np.concatenate([x, [t]])
            d1 = np.zeros(5)
            d1[-1] = 1.0
            jet = Jet2(val, d1, np.zeros(5))
            for W, b in zip(Ws[:-1], bs[:-1]):
                jet = jet.affine(W, b).tanh()
            return jet.affine(Ws[-1], bs[-1])

        t0, h = 0.37, 1e-4
        jet = forward_jet(t0)
        v_num = (forward(t0 + h) - forward(t0 - h)) / (2 * h)
        a_num = (forward(t0 + h) - 2 * forward(t0) + forward(t0 - h)) / (h * h)
        assert np.abs(jet.d1 - v_num).max() < 1e-6 * max(1, np.abs(v_num).max())
        assert np.abs(jet.d2 - a_num).max() < 1e-4 * max(1, np.abs(a_num).max())

    def test_jet_of_tensors_gradcheck(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=3)

        def build(W1, b1, W2, b2):
            val = Tensor(np.concatenate([x, [0.4]]))
            d1 = Tensor(np.array([0.0, 0, 0, 1.0]))
            d2 = Tensor(np.zeros(4))
            jet = Jet2(val, d1, d2).affine(W1, b1).tanh().affine(W2, b2)
            # loss touches value, velocity, and acceleration heads
            return (jet.val * jet.val).sum() + jet.d1.sum() + (jet.d2 * jet.d2).sum()

        check_grad(build,
                   rng.normal(size=(4, 6)), rng.normal(size=6),
                   rng.normal(size=(6, 2)), rng.normal(size=2),
                   tol=1e-5)
