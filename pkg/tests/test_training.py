import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpkan import (KanLayer, KanNetwork, KanNeuron, TrainConfig, TrainHistory, adam_step, backward,
                   loss_eval, two_phase_train)
from cpkan.errors import InvalidInputError
from cpkan.training import AdamState, flatten_grads, parameters, phase1_optimize_degrees


def random_net(seed, shape, degree, mix=False, squash_mode="tanh"):
    net = KanNetwork.init(shape, seed=seed, degree=degree, mix=mix, squash_mode=squash_mode)
    rng = np.random.default_rng(seed + 1)
    for layer in net.layers:
        layer.weight *= 2.0
        layer.bias[:] = rng.uniform(-0.5, 0.5, layer.n_out)
        layer.coeffs[:] = rng.standard_normal(layer.coeffs.shape) * layer.coeff_mask() / (degree + 1)
        if layer.mix is not None:
            layer.mix[:] = np.eye(layer.n_out) + 0.3 * rng.standard_normal(layer.mix.shape)
    return net


def ragged_net(seed, shape, max_degree, mix=False, squash_mode="tanh"):
    net = random_net(seed, shape, max_degree, mix, squash_mode)
    rng = np.random.default_rng(seed + 2)
    for layer in net.layers:
        degrees = rng.integers(0, max_degree + 1, layer.n_out)
        layer.set_degrees(degrees, [rng.standard_normal(d + 1) / (d + 1) for d in degrees])
    return net


def check_gradients(net, X, Y, w, loss, h=1e-6):
    _, grads = backward(net, X, Y, w, loss)
    params = parameters(net)
    flat = flatten_grads(grads)
    masks = []
    for layer in net.layers:
        masks += [np.ones_like(layer.weight), np.ones_like(layer.bias), layer.coeff_mask()]
        if layer.mix is not None:
            masks.append(np.ones_like(layer.mix))
    for p, g, mask in zip(params, flat, masks):
        for idx in np.ndindex(p.shape):
            if not mask[idx]:
                assert g[idx] == 0.0
                continue
            old = p[idx]
            p[idx] = old + h
            up = loss_eval(net.forward(X), Y, w, loss)
            p[idx] = old - h
            down = loss_eval(net.forward(X), Y, w, loss)
            p[idx] = old
            fd = (up - down) / (2 * h)
            err = abs(g[idx] - fd)
            tol = max(1e-5 * max(abs(fd), abs(g[idx])), 1e-8)
            assert err <= tol, (idx, g[idx], fd)


# -- losses -------------------------------------------------------------------------

def test_cross_entropy_limits():
    assert loss_eval(np.array([[50.0, 0.0, 0.0]]), [0], kind="cross_entropy") < 1e-20
    assert loss_eval(np.zeros((4, 5)), [0, 1, 2, 3], kind="cross_entropy") == pytest.approx(math.log(5), rel=1e-15)
    assert loss_eval(np.zeros((1, 3)), np.array([[0, 1, 0]]), kind="cross_entropy") == pytest.approx(math.log(3))


def test_weighted_mse_shared_example():
    assert loss_eval(np.array([0.0, 0.0]), np.array([1.0, 0.0]), [3, 1], "weighted_mse") == 0.75
    assert loss_eval(np.array([0.0, 0.0]), np.array([1.0, 0.0]), None, "mse") == 0.5


@pytest.mark.parametrize("args", [
    (np.zeros((2, 3)), [0, 3], None, "cross_entropy"),
    (np.zeros((2, 3)), [0, 0.5], None, "cross_entropy"),
    (np.zeros(2), np.ones(2), [0, 0], "weighted_mse"),
    (np.zeros(2), np.ones(2), None, "huber"),
])
def test_loss_errors(args):
    with pytest.raises(InvalidInputError):
        loss_eval(*args)


# -- gradients -------------------------------------------------------------------------

def test_zero_coefficients_give_zero_gradients():
    net = random_net(0, [3, 4, 1], 3)
    for layer in net.layers:
        layer.coeffs[:] = 0.0
    X = np.random.default_rng(0).standard_normal((6, 3))
    value, grads = backward(net, X, np.zeros(6))
    assert value == 0.0
    assert all(np.all(g == 0) for layer in grads for g in layer.values())


def test_single_neuron_hand_gradient():
    layer = KanLayer.from_neurons([KanNeuron([0.4, -0.2], 0.1, 1, [0.0, 1.0])])
    net = KanNetwork([layer], squash_mode="none")
    x = np.array([[1.5, 2.0]])
    yhat = 0.4 * 1.5 - 0.2 * 2.0 + 0.1
    value, grads = backward(net, x, np.array([1.0]))
    assert value == pytest.approx((yhat - 1.0) ** 2, rel=1e-15)
    np.testing.assert_allclose(grads[0]["weight"], [2 * (yhat - 1.0) * x[0]], rtol=1e-14)
    np.testing.assert_allclose(grads[0]["bias"], [2 * (yhat - 1.0)], rtol=1e-14)
    np.testing.assert_allclose(grads[0]["coeffs"], [[2 * (yhat - 1.0), 2 * (yhat - 1.0) * yhat]], rtol=1e-14)


CASES = [
    # (seed, shape, max degree, mix, squash, loss)
    (0, [3, 1], 0, False, "tanh", "mse"),
    (1, [2, 3, 1], 7, False, "tanh", "mse"),
    (2, [4, 3, 2, 1], 5, False, "tanh", "mse"),
    (3, [3, 4, 2], 4, True, "tanh", "mse"),
    (4, [2, 2], 6, False, "none", "mse"),
    (5, [3, 5, 3], 3, False, "tanh", "cross_entropy"),
    (6, [3, 2, 1], 5, True, "tanh", "weighted_mse"),
]


@pytest.mark.parametrize("seed,shape,degree,mix,mode,loss", CASES)
def test_gradients_match_finite_differences(seed, shape, degree, mix, mode, loss):
    net = ragged_net(seed, shape, degree, mix, mode)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((5, shape[0])) * (0.3 if mode == "none" else 1.0)
    if loss == "cross_entropy":
        Y = rng.integers(0, shape[-1], 5)
    else:
        Y = rng.standard_normal((5, shape[-1]))
    w = rng.uniform(0.2, 2.0, 5) if loss == "weighted_mse" else None
    check_gradients(net, X, Y, w, loss)


def test_frozen_coefficients_get_zero_gradients():
    net = random_net(1, [2, 3, 1], 3)
    _, grads = backward(net, np.ones((4, 2)), np.ones(4), trainable_coefficients=False)
    assert all(np.all(g["coeffs"] == 0) for g in grads)
    assert any(np.any(g["weight"] != 0) for g in grads)


# -- Adam -------------------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, -2.0])]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.zeros(2)], state, lr=0.1)
    assert p[0].tolist() == [1.0, -2.0]


def test_adam_constant_gradient_steps_approach_lr():
    p = [np.array([0.0, 0.0])]
    state = AdamState.zeros_like(p)
    g = [np.array([3.0, -0.02])]
    for _ in range(200):
        before = p[0].copy()
        adam_step(p, g, state, lr=0.01)
    step = p[0] - before
    np.testing.assert_allclose(step, [-0.01, 0.01], rtol=1e-6)


def test_adam_hand_trace():
    p = [np.array([0.0])]
    state = AdamState.zeros_like(p)
    # step 1: m = 0.1, v = 0.001, m_hat = v_hat = 1 -> p -= 0.1 / (1 + 1e-8)
    adam_step(p, [np.array([1.0])], state, lr=0.1)
    assert p[0][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)
    assert state.m[0][0] == pytest.approx(0.1) and state.v[0][0] == pytest.approx(0.001)
    # step 2: m = 0.19, v = 0.001999, corrections 0.19 and 0.001999 -> same step again
    adam_step(p, [np.array([1.0])], state, lr=0.1)
    assert p[0][0] == pytest.approx(-0.2 / (1 + 1e-8), rel=1e-14)
    assert state.step == 2


def test_adam_length_mismatch():
    with pytest.raises(InvalidInputError):
        adam_step([np.zeros(1)], [], AdamState.zeros_like([np.zeros(1)]))


def test_small_adam_step_rarely_increases_loss():
    ok = 0
    for seed in range(100):
        net = random_net(seed, [3, 4, 1], 4)
        rng = np.random.default_rng(seed)
        X, Y = rng.standard_normal((32, 3)), rng.standard_normal(32)
        before, grads = backward(net, X, Y)
        params = parameters(net)
        adam_step(params, flatten_grads(grads), AdamState.zeros_like(params), lr=1e-4)
        ok += loss_eval(net.forward(X), Y) <= before
    assert ok >= 95


# -- phase 1 --------------------------------------------------------------------------

def test_skip_threshold_example():
    net = KanNetwork.init([2, 1], seed=0)
    X = np.random.default_rng(0).standard_normal((50, 2))
    recs = phase1_optimize_degrees(net, X, np.sin(X[:, 0]), TrainConfig(max_degree=5, skip_threshold=5))
    assert recs[0]["solver"] == "skipped"
    assert net.layers[0].degrees.tolist() == [3]
    # skipped layers still get least-squares coefficients, not the initial e_0
    assert net.layers[0].coeffs.shape == (1, 4) and np.any(net.layers[0].coeffs[0, 1:] != 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=2, max_size=4), st.integers(0, 5), st.integers(1, 40))
def test_skip_rule(shape, max_degree, threshold):
    net = KanNetwork.init(shape, seed=0)
    X = np.random.default_rng(1).standard_normal((30, shape[0]))
    cfg = TrainConfig(max_degree=max_degree, skip_threshold=threshold, skip_default_degree=0, solver="exact")
    recs = phase1_optimize_degrees(net, X, np.random.default_rng(2).standard_normal((30, shape[-1])), cfg)
    for rec, width in zip(recs, shape[1:]):
        assert (rec["solver"] == "skipped") == (width * (max_degree + 1) > threshold)


def t2_problem(n=400, seed=0):
    x = np.random.default_rng(seed).uniform(-2, 2, (n, 1))
    return x, 2 * np.tanh(x[:, 0]) ** 2 - 1


def t2_net():
    return KanNetwork([KanLayer.from_neurons([KanNeuron([1.0], 0.0, 1, [1.0, 0.0])])])


@pytest.mark.parametrize("solver", ["exact", "qubo-sa"])
def test_phase1_recovers_exact_degree(solver):
    X, y = t2_problem()
    net = t2_net()
    recs = phase1_optimize_degrees(net, X, y, TrainConfig(max_degree=4, solver=solver))
    assert recs[0]["degrees"] == [2]
    assert np.mean((net.forward(X)[:, 0] - y) ** 2) <= 1e-6


def test_phase1_resets_mix_and_uses_cyclic_targets():
    net = KanNetwork.init([2, 3, 2], seed=0, mix=True)
    net.layers[0].mix[:] = 7.0
    X = np.random.default_rng(0).standard_normal((60, 2))
    Y = np.column_stack([np.tanh(X[:, 0]), np.tanh(X[:, 1]) ** 2])
    phase1_optimize_degrees(net, X, Y, TrainConfig(max_degree=3, solver="exact"))
    assert np.array_equal(net.layers[0].mix, np.eye(3))
    from cpkan.training import _phase1_targets
    T = _phase1_targets(Y, 3, "mse")
    assert np.array_equal(T, Y[:, [0, 1, 0]])
    assert np.array_equal(_phase1_targets(np.array([2, 0]), 3, "cross_entropy"),
                          [[0, 0, 1], [1, 0, 0]])


def test_phase1_input_errors():
    net = KanNetwork.init([2, 1], seed=0)
    with pytest.raises(InvalidInputError):
        phase1_optimize_degrees(net, np.zeros((0, 2)), np.zeros(0), TrainConfig())
    with pytest.raises(InvalidInputError):
        phase1_optimize_degrees(net, np.zeros((5, 3)), np.zeros(5), TrainConfig())


def test_phase1_row_cap_is_seeded():
    X = np.random.default_rng(0).standard_normal((300, 2))
    y = np.sin(X[:, 0])
    cfg = TrainConfig(max_degree=3, phase1_max_rows=50, seed=4)
    a, b = KanNetwork.init([2, 2, 1], seed=0), KanNetwork.init([2, 2, 1], seed=0)
    phase1_optimize_degrees(a, X, y, cfg)
    phase1_optimize_degrees(b, X, y, cfg)
    assert a.dumps() == b.dumps()


# -- two-phase training ------------------------------------------------------------------

def test_zero_epochs_returns_phase1_net():
    X, y = t2_problem()
    ref = t2_net()
    phase1_optimize_degrees(ref, X, y, TrainConfig(epochs=0, max_degree=4))
    net, hist = two_phase_train(t2_net(), (X, y), (X, y), TrainConfig(epochs=0, max_degree=4))
    assert net.dumps() == ref.dumps()
    assert hist.epochs == [] and hist.train_loss == []
    assert hist.to_csv() == "epoch,train_loss,val_loss,val_metric\n"


def test_end_to_end_t2_recovery():
    X, y = t2_problem()
    net, hist = two_phase_train(t2_net(), (X, y), (X, y), TrainConfig(epochs=5, max_degree=4))
    assert net.layers[0].degrees.tolist() == [2]
    assert hist.val_loss[-1] <= 1e-6


def test_toy_cubic_reaches_noise_floor():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (3000, 1))
    z = np.tanh(x[:, 0])
    sigma = 0.01
    y = 4 * z**3 - 3 * z + sigma * rng.standard_normal(3000)
    net, hist = two_phase_train(KanNetwork.init([1, 4, 1], seed=0), (x[:2000], y[:2000]),
                                (x[2000:], y[2000:]), TrainConfig())
    assert hist.val_loss[-1] <= 5 * sigma**2


def small_problem():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((200, 3))
    y = np.tanh(X @ np.array([0.5, -0.3, 0.2])) + 0.05 * rng.standard_normal(200)
    return X, y


def test_training_is_deterministic():
    X, y = small_problem()
    cfg = TrainConfig(epochs=3, max_degree=3, seed=5)
    a, ha = two_phase_train(KanNetwork.init([3, 4, 1], seed=1), (X, y), (X, y), cfg)
    b, hb = two_phase_train(KanNetwork.init([3, 4, 1], seed=1), (X, y), (X, y), cfg)
    assert a.dumps() == b.dumps()
    assert ha.to_csv() == hb.to_csv()
    assert len(ha.epochs) == len(ha.train_loss) == len(ha.val_loss) == len(ha.val_metric) == 3


def test_frozen_coefficients_unchanged_by_training():
    X, y = small_problem()
    net = KanNetwork.init([3, 2, 1], seed=0)
    cfg0 = TrainConfig(epochs=0, max_degree=3)
    ref, _ = two_phase_train(net.copy(), (X, y), None, cfg0)
    cfg = TrainConfig(epochs=3, max_degree=3, trainable_coefficients=False)
    out, _ = two_phase_train(net.copy(), (X, y), None, cfg)
    for a, b in zip(ref.layers, out.layers):
        assert np.array_equal(a.coeffs, b.coeffs)
        assert not np.array_equal(a.weight, b.weight)


def test_eval_matches_last_history_row():
    X, y = small_problem()
    net, hist = two_phase_train(KanNetwork.init([3, 1], seed=0), (X, y), None, TrainConfig(epochs=2, max_degree=3))
    assert loss_eval(net.forward(X), y) == hist.train_loss[-1]
    assert hist.val_loss == [None, None]


def test_early_stopping_restores_best():
    X, y = small_problem()
    Xv, yv = X[:50], -y[:50]  # anti-correlated validation set: validation loss worsens
    cfg = TrainConfig(epochs=30, max_degree=3, learning_rate=1e-2, early_stop_patience=2)
    net, hist = two_phase_train(KanNetwork.init([3, 1], seed=0), (X, y), (Xv, yv), cfg)
    assert hist.stopped_early and len(hist.epochs) < 30
    best = int(np.argmin(hist.val_loss))
    assert loss_eval(net.forward(Xv), yv) == hist.val_loss[best]


def test_weighted_training_runs_and_reports_weighted_r2():
    X, y = small_problem()
    w = np.random.default_rng(0).uniform(0.5, 2, 200)
    cfg = TrainConfig(epochs=1, max_degree=3, loss="weighted_mse", phase1_weighted=True)
    _, hist = two_phase_train(KanNetwork.init([3, 1], seed=0), (X, y, w), (X, y, w), cfg)
    assert hist.metric_name == "weighted_r2" and 0 < hist.val_metric[0] <= 1


def test_classification_history_reports_accuracy():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((300, 2))
    labels = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0).astype(int)
    cfg = TrainConfig(epochs=3, max_degree=3, loss="cross_entropy", learning_rate=1e-2)
    _, hist = two_phase_train(KanNetwork.init([2, 3], seed=0), (X, labels), (X, labels), cfg)
    assert hist.metric_name == "accuracy" and hist.val_metric[-1] > 0.6


@pytest.mark.parametrize("kwargs", [dict(epochs=-1), dict(batch_size=0), dict(learning_rate=0.0),
                                    dict(skip_default_degree=9), dict(loss="l1"), dict(solver="tabu"),
                                    dict(skip_threshold=0)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        TrainConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = TrainConfig(epochs=3, solver="greedy")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidInputError):
        TrainConfig.from_dict({"epoch": 3})


def test_history_csv_format():
    h = TrainHistory(epochs=[1], train_loss=[0.5], val_loss=[0.25], val_metric=[0.1])
    assert h.to_csv() == "epoch,train_loss,val_loss,val_metric\n1,0.5,0.25,0.1\n"
    h.phase1 = [{"layer": 0, "solver": "exact", "degrees": [1, 2], "repairs": 0, "total_cost": 0.5, "wall_ms": 1.25}]
    assert h.phase1_report().splitlines()[1] == "0,exact,1 2,0,0.5,1.250"
