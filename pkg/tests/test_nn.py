"""Differentiable-substrate tests: per-layer gradient checks, Adam, gumbel,
KL, and the forward-mode contracts (determinism, batch-norm statistics)."""

import numpy as np
import pytest

from tabforge.nn import tensor as T
from tabforge.nn.functional import cross_entropy_logits, gumbel_softmax, kl_std_normal
from tabforge.nn.layers import (
    BatchNorm,
    ConcatSkip,
    Dense,
    Dropout,
    GumbelSoftmax,
    LeakyReLU,
    Net,
    ReLU,
    Softmax,
    Tanh,
)
from tabforge.nn.optim import Adam
from tabforge.nn.tensor import Tensor

from gradcheck import assert_grads_match, finite_diff, max_rel_error


def _scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    w = rng.normal(size=out.data.shape)
    return T.sum_(out * Tensor(w.astype(out.data.dtype)))


LAYER_CASES = {
    "dense": [Dense(5, 4)],
    "relu": [Dense(5, 4), ReLU()],
    "leaky": [Dense(5, 4), LeakyReLU(0.2)],
    "tanh": [Dense(5, 4), Tanh()],
    "softmax": [Dense(5, 4), Softmax()],
    "gumbel": [Dense(5, 4), GumbelSoftmax(span=(0, 4), tau=0.5)],
    "batchnorm": [Dense(5, 4), BatchNorm(4)],
    "dropout": [Dense(5, 4), Dropout(0.4)],
    "concat_skip": [ConcatSkip((Dense(5, 3), BatchNorm(3), ReLU()))],
    "spans": [Dense(5, 6), Tanh(span=(0, 1)), Softmax(span=(1, 3)), GumbelSoftmax(span=(4, 2), tau=0.3)],
}


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradients_match_finite_differences(name):
    rng = np.random.default_rng(11)
    net = Net(LAYER_CASES[name], rng, dtype=np.float64)
    x = rng.normal(size=(6, 5))
    proj = np.random.default_rng(5)

    def loss_value():
        out = net.forward(x, mode="train", rng=np.random.default_rng(99))
        return float(_scalarize(out, np.random.default_rng(5)).data)

    out = net.forward(x, mode="train", rng=np.random.default_rng(99))
    loss = _scalarize(out, proj)
    net.zero_grad()
    loss.backward()
    numeric = finite_diff(loss_value, net.parameters())
    assert_grads_match(net.parameters(), numeric)


def test_zero_output_gradient_gives_zero_parameter_gradients():
    rng = np.random.default_rng(0)
    net = Net([Dense(3, 4), ReLU(), Dense(4, 2)], rng)
    net.forward(rng.normal(size=(5, 3)).astype(np.float32), mode="train", rng=rng)
    grads = net.backward(np.zeros((5, 2), dtype=np.float32))
    for g in grads.values():
        assert np.all(g == 0.0)


def test_tanh_derivative_at_zero_is_one():
    x = Tensor(np.zeros((1, 1)), requires_grad=True)
    y = T.tanh(x)
    y.backward(np.ones((1, 1)))
    assert np.allclose(x.grad, 1.0)


def test_backward_before_forward_raises():
    net = Net([Dense(2, 2)], np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        net.backward(np.zeros((1, 2)))


def test_identity_dense_passes_input_through():
    net = Net([Dense(3, 3)], np.random.default_rng(0))
    net.params["0.W"].data = np.eye(3, dtype=np.float32)
    net.params["0.b"].data = np.zeros(3, dtype=np.float32)
    x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
    out = net.forward(x, mode="eval")
    assert np.allclose(out.data, x)


def test_dropout_p0_is_identity_in_both_modes():
    net = Net([Dense(3, 3), Dropout(0.0)], np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
    rng = np.random.default_rng(2)
    assert np.array_equal(net.forward(x, "train", rng).data, net.forward(x, "eval").data)


def test_softmax_rows_sum_to_one():
    net = Net([Dense(5, 4), Softmax()], np.random.default_rng(3))
    out = net.forward(np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32), "eval")
    assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)


def test_eval_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(4)
    net = Net([Dense(6, 8), BatchNorm(8), ReLU(), Dropout(0.5), Dense(8, 3), Softmax()], rng)
    x = np.random.default_rng(1).normal(size=(9, 6)).astype(np.float32)
    # Touch train mode first so running stats are non-trivial.
    net.forward(x, "train", np.random.default_rng(7))
    a = net.forward(x, "eval").data
    b = net.forward(x, "eval").data
    assert np.array_equal(a, b)


def test_batchnorm_train_mode_normalizes_batch():
    rng = np.random.default_rng(5)
    net = Net([Dense(4, 6), BatchNorm(6)], rng)
    x = (np.random.default_rng(2).normal(size=(256, 4)) * 3 + 1).astype(np.float32)
    out = net.forward(x, "train", rng).data  # gamma=1, beta=0 at init
    assert np.max(np.abs(out.mean(axis=0))) <= 1e-5
    assert np.allclose(out.var(axis=0), 1.0, atol=1e-4)


class TestGumbelSoftmax:
    def test_soft_mode_simplex(self):
        rng = np.random.default_rng(0)
        out = gumbel_softmax(Tensor(rng.normal(size=(50, 6)).astype(np.float32)), 0.5, rng)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(out.data > 0.0)

    def test_dominant_logit_wins(self):
        logits = Tensor(np.array([[50.0, 0.0, 0.0]], dtype=np.float32))
        for seed in range(20):
            out = gumbel_softmax(logits, 0.2, np.random.default_rng(seed))
            assert out.data[0, 0] > 0.999

    def test_hard_mode_is_one_hot(self):
        rng = np.random.default_rng(1)
        out = gumbel_softmax(Tensor(rng.normal(size=(10, 4)).astype(np.float32)), 0.3, rng, hard=True)
        assert np.all(np.sort(out.data, axis=1)[:, :-1] == 0.0)
        assert np.all(out.data.max(axis=1) == 1.0)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            gumbel_softmax(Tensor(np.zeros((1, 2))), 0.0, np.random.default_rng(0))


class TestKLStdNormal:
    def test_standard_normal_is_zero(self):
        assert kl_std_normal(np.zeros(3), np.ones(3)) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_case(self):
        # 1/2 (mu^2 + sigma^2 - 1 - ln sigma^2) = 1/2 per dimension
        assert kl_std_normal(np.array([1.0]), np.array([1.0])) == pytest.approx(0.5, abs=1e-12)

    def test_matches_quadrature(self):
        mu, sigma = 0.7, 1.3
        xs = np.linspace(-12, 12, 200001)
        p = np.exp(-0.5 * ((xs - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
        q = np.exp(-0.5 * xs**2) / np.sqrt(2 * np.pi)
        integrand = p * (np.log(p) - np.log(q))
        expected = np.trapezoid(integrand, xs)
        got = kl_std_normal(np.array([mu]), np.array([sigma]))
        assert got == pytest.approx(expected, abs=1e-4)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            kl_std_normal(np.zeros(2), np.array([1.0, 0.0]))

    def test_graph_gradient(self):
        mu = Tensor(np.array([0.3, -0.8]), requires_grad=True)
        sigma = Tensor(np.array([0.9, 1.4]), requires_grad=True)
        kl = kl_std_normal(mu, sigma)
        kl.backward()

        def f():
            return float(kl_std_normal(Tensor(mu.data), Tensor(sigma.data)).data)

        numeric = finite_diff(f, [("mu", mu), ("sigma", sigma)])
        assert max_rel_error(mu.grad, numeric["mu"]) <= 1e-3
        assert max_rel_error(sigma.grad, numeric["sigma"]) <= 1e-3


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros_like(p.data)
            opt.step()
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude(self):
        # Bias-corrected first step with g=1: delta = -lr / (1 + eps)
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(-0.1 * 1.0 / (1.0 + 1e-8), abs=1e-12)

    def test_two_runs_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(3)
            net = Net([Dense(4, 8), ReLU(), Dense(8, 1)], rng)
            opt = Adam(net.parameters(), lr=1e-3)
            x = np.random.default_rng(0).normal(size=(16, 4)).astype(np.float32)
            for _ in range(10):
                out = net.forward(x, "train", rng)
                loss = T.mean(out * out)
                opt.zero_grad()
                loss.backward()
                opt.step()
            return net.state_dict()

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_cross_entropy_logits_zero_for_confident_match():
    logits = Tensor(np.array([[100.0, 0.0], [0.0, 100.0]], dtype=np.float32))
    ce = cross_entropy_logits(logits, np.array([0, 1]))
    assert np.allclose(ce.data, 0.0, atol=1e-6)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_nan_guard_trips_on_overflow():
    x = Tensor(np.array([[1e30]], dtype=np.float32))
    with pytest.raises(FloatingPointError):
        T.exp(T.mul(x, 1e10))
