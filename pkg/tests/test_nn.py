import math

import numpy as np
import pytest

import oracles
from homecast import nn


def test_parameter_counts_from_layer_shapes():
    # 10-5-20-5-5 trunk: 55 + 120 + 105 + 30 = 310, plus the output layer
    assert nn.n_parameters(nn.dnnr_spec()) == 310 + 6
    assert nn.n_parameters(nn.dnnc_spec()) == 310 + 12
    assert nn.dnnc_spec()[-1].output_size == 2


def test_dropout_rates():
    assert [l.dropout for l in nn.dnnr_spec()] == [0.30] * 4 + [0.0]
    assert [l.dropout for l in nn.dnnc_spec()] == [0.20] * 4 + [0.0]
    assert all(l.activation == nn.RELU for l in nn.dnnr_spec()[:4])
    assert nn.dnnr_spec()[-1].activation == nn.SIGMOID


def test_zero_weights_give_half():
    m = nn.init_model(nn.dnnc_spec())
    zero = m.with_params([np.zeros_like(p) for p in m.params])
    out = nn.predict(zero, np.random.default_rng(0).normal(size=(4, 10)))
    assert np.all(out == 0.5)


def test_forward_matches_oracle():
    m = nn.init_model(nn.dnnc_spec(0.0), nn.CCE, seed=5)
    m = m.with_params([p + 0.1 * np.random.default_rng(i).normal(size=p.shape) for i, p in enumerate(m.params)])
    x = np.random.default_rng(1).normal(size=10)
    got = nn.predict(m, x)[0]
    want = oracles.mlp_forward([W.tolist() for W in m.weights], [b.tolist() for b in m.biases],
                               [l.activation for l in m.layers], x.tolist())
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_rate_zero_train_equals_infer():
    m = nn.init_model(nn.dnnr_spec(0.0), seed=2)
    X = np.random.default_rng(3).normal(size=(5, 10))
    assert np.array_equal(nn.forward(m, X, np.random.default_rng(0)).output, nn.predict(m, X))


def test_input_width_checked():
    with pytest.raises(ValueError):
        nn.predict(nn.init_model(nn.dnnr_spec()), np.zeros((1, 9)))


def test_inverted_dropout_preserves_expectation():
    layer = [nn.LayerSpec(3, 5, nn.RELU, 0.3)]
    m = nn.init_model(layer, seed=0)
    m = m.with_params([np.abs(m.weights[0]), np.full(5, 0.2)])
    x = np.array([[0.5, 1.0, -0.2]])
    clean = nn.predict(m, x)[0]
    out = nn.forward(m, np.repeat(x, 10_000, axis=0), np.random.default_rng(7)).output
    sigma = clean * math.sqrt(0.3 / 0.7)
    assert np.all(np.abs(out.mean(axis=0) - clean) <= 3 * sigma / 100)
    assert set(np.unique(np.round(out / clean, 9)).tolist()) <= {0.0, round(1 / 0.7, 9)}


def test_loss_values():
    p = np.array([[0.3, 0.9]])
    assert nn.loss_value(nn.MSE, p, p) == 0.0
    assert nn.loss_value(nn.CCE, np.array([[0.5, 0.5]]), np.array([[0.0, 1.0]])) == pytest.approx(math.log(2))
    # unnormalized outputs are rescaled to sum to one first
    assert nn.loss_value(nn.CCE, np.array([[0.2, 0.6]]), np.array([[0.0, 1.0]])) == pytest.approx(-math.log(0.75))
    rng = np.random.default_rng(0)
    pred, tgt = rng.random((6, 2)), np.eye(2)[rng.integers(0, 2, 6)]
    q = pred / pred.sum(axis=1, keepdims=True)
    want = np.mean([-sum(t * math.log(v + 1e-12) for t, v in zip(tr, qr)) for tr, qr in zip(tgt, q)])
    assert nn.loss_value(nn.CCE, pred, tgt) == pytest.approx(want, rel=1e-12)
    assert nn.loss_value(nn.MSE, pred, tgt) == pytest.approx(np.mean((pred - tgt) ** 2), rel=1e-12)


def batch_loss(model, X, Y):
    return lambda params: nn.loss_value(model.loss, nn.predict(model.with_params(params), X), Y)


@pytest.mark.parametrize("arch, loss", [("dnnr", nn.MSE), ("dnnc", nn.CCE), ("dnnc", nn.MSE)])
def test_backprop_matches_finite_differences(arch, loss):
    spec = nn.dnnr_spec(0.0) if arch == "dnnr" else nn.dnnc_spec(0.0)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        m = nn.init_model(spec, loss, seed)
        m = m.with_params([p + 0.05 * rng.normal(size=p.shape) for p in m.params])
        X = rng.normal(size=(8, 10))
        width = spec[-1].output_size
        Y = rng.random((8, width)) if loss == nn.MSE else np.eye(2)[rng.integers(0, 2, 8)]
        analytic = nn.backward(m, nn.forward(m, X), Y)
        numeric = oracles.central_differences(batch_loss(m, X, Y), [p.copy() for p in m.params])
        assert oracles.max_relative_error(analytic, numeric) < 1e-4


def test_backward_honors_dropout_masks():
    spec = nn.dnnr_spec(0.5)
    m = nn.init_model(spec, seed=1)
    # nonzero biases keep pre-activations off the ReLU kink when a whole layer is dropped
    m = m.with_params([p + 0.1 * np.random.default_rng(i).normal(size=p.shape) for i, p in enumerate(m.params)])
    X = np.random.default_rng(2).normal(size=(4, 10))
    Y = np.random.default_rng(3).random((4, 1))
    cache = nn.forward(m, X, np.random.default_rng(4))
    grads = nn.backward(m, cache, Y)

    def fixed_mask_loss(params):
        # replay the recorded masks on perturbed parameters
        mm = m.with_params(params)
        a = X
        for l, W, b, mask in zip(mm.layers, mm.weights, mm.biases, cache.masks):
            z = a @ W.T + b
            a = np.maximum(z, 0) if l.activation == nn.RELU else 1 / (1 + np.exp(-z))
            if mask is not None:
                a = a * mask
        return nn.loss_value(nn.MSE, a, Y)

    numeric = oracles.central_differences(fixed_mask_loss, [p.copy() for p in m.params])
    assert oracles.max_relative_error(grads, numeric) < 1e-4


def test_zero_error_gives_zero_gradients():
    m = nn.init_model(nn.dnnr_spec(0.0), seed=0)
    X = np.random.default_rng(0).normal(size=(5, 10))
    cache = nn.forward(m, X)
    assert all(np.all(g == 0) for g in nn.backward(m, cache, cache.output))


def test_dead_relu_unit_passes_no_gradient():
    m = nn.init_model(nn.dnnr_spec(0.0), seed=0)
    b0 = m.biases[0].copy()
    b0[2] = -1e3
    m = m.with_params([m.weights[0], b0, *m.params[2:]])
    X = np.random.default_rng(1).normal(size=(6, 10))
    grads = nn.backward(m, nn.forward(m, X), np.ones((6, 1)))
    assert np.all(grads[0][2] == 0) and grads[1][2] == 0


def test_sgd_step():
    assert nn.sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)[0] == pytest.approx(0.8, abs=1e-12)
    p = [np.arange(3.0)]
    assert np.array_equal(nn.sgd_step(p, [np.ones(3)], 0.0)[0], p[0])
    seq = np.array([0.5])
    for g in (1.0, -2.0, 0.25):
        seq = nn.sgd_step([seq], [np.array([g])], 0.01)[0]
    assert seq[0] == pytest.approx(0.5 - 0.01 * (1.0 - 2.0 + 0.25), abs=1e-15)


def test_rmsprop_first_step():
    state = nn.OptimizerState.rmsprop(0.001, 0.9, 1e-8)
    state, (p,) = nn.rmsprop_step(state, [np.array([0.0])], [np.array([1.0])])
    assert state.accum[0][0] == pytest.approx(0.1, abs=1e-15)
    assert p[0] == pytest.approx(-0.0031623, abs=1e-7)
    assert p[0] == pytest.approx(-0.001 / (math.sqrt(0.1) + 1e-8), abs=1e-12)


def test_rmsprop_zero_gradient_decays_state():
    state = nn.OptimizerState.rmsprop()
    state, (p,) = nn.rmsprop_step(state, [np.array([3.0])], [np.array([2.0])])
    s_before = state.accum[0].copy()
    state, (q,) = nn.rmsprop_step(state, [p], [np.array([0.0])])
    assert q[0] == p[0]
    assert state.accum[0][0] == pytest.approx(0.9 * s_before[0], abs=1e-15)


def test_rmsprop_constant_gradient_step_tends_to_lr():
    state = nn.OptimizerState.rmsprop(0.001)
    p = np.array([0.0])
    for _ in range(300):
        before = p.copy()
        state, (p,) = nn.rmsprop_step(state, [p], [np.array([-4.0])])
    assert (p - before)[0] == pytest.approx(0.001, rel=1e-6)


def separable_toy(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (200, 10))
    m = X @ rng.normal(size=10)
    keep = np.abs(m) > 0.3 * np.abs(m).std()
    return X[keep], (m[keep] > 0).astype(int)


def test_learns_separable_toy():
    X, y = separable_toy()
    m = nn.train(nn.dnnc_spec(0.0), nn.CCE, nn.OptimizerState.rmsprop(0.01), X, np.eye(2)[y], 50, 32, 0)
    assert np.array_equal(nn.predict(m, X).argmax(axis=1), y)


def test_convex_toy_loss_decreases():
    X, y = separable_toy(1)
    m = nn.train([nn.LayerSpec(10, 1, nn.SIGMOID)], nn.MSE, nn.OptimizerState.sgd(0.5), X,
                 y.astype(float), 50, len(X), 0)
    hist = m.meta["loss_history"]
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < hist[0]


def test_zero_epochs_returns_initial_model():
    X, y = separable_toy()
    m = nn.train(nn.dnnr_spec(), nn.MSE, nn.OptimizerState.sgd(), X, y, 0, 32, 4)
    init = nn.init_model(nn.dnnr_spec(), nn.MSE, np.random.default_rng(4))
    assert not m.trained
    assert all(np.array_equal(a, b) for a, b in zip(m.params, init.params))


def test_training_is_reproducible_and_serializable():
    X, y = separable_toy()
    a = nn.train(nn.dnnr_spec(), nn.MSE, nn.OptimizerState.sgd(0.1), X, y, 3, 32, 9)
    b = nn.train(nn.dnnr_spec(), nn.MSE, nn.OptimizerState.sgd(0.1), X, y, 3, 32, 9)
    assert a.to_dict() == b.to_dict()
    back = nn.MlpModel.from_dict(a.to_dict())
    assert np.array_equal(nn.predict(back, X), nn.predict(a, X))
    out = nn.predict(a, X)
    assert np.all((out >= 0) & (out <= 1))


def test_non_finite_loss_raises():
    X, y = separable_toy()
    X = X.copy()
    X[0, 0] = np.nan
    with pytest.raises(nn.NumericalError):
        nn.train(nn.dnnr_spec(), nn.MSE, nn.OptimizerState.sgd(), X, y, 1, 32, 0)
