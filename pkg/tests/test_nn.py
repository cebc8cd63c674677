import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnb import nn
from mnb.nn import EVAL, TRAIN, BatchNorm, Dense, Model, ReLU
from mnb.params import DimensionError, ParameterSet

from conftest import randomize_bn, small_model


def reference_forward(model, x):
    """Row-by-row EVAL forward written with plain loops, independent of nn._run."""
    out_feats, out_logits = [], []
    for row in x:
        h = list(row)
        for i, layer in enumerate(model.layers):
            if isinstance(layer, Dense):
                w, b = model.params[f"{i}.weight"], model.params[f"{i}.bias"]
                h = [sum(w[o, j] * h[j] for j in range(layer.in_dim)) + b[o] for o in range(layer.out_dim)]
            elif isinstance(layer, BatchNorm):
                g, be = model.params[f"{i}.gamma"], model.params[f"{i}.beta"]
                m, v = model.bn_stats[f"{i}.running_mean"], model.bn_stats[f"{i}.running_var"]
                h = [g[j] * (h[j] - m[j]) / np.sqrt(v[j] + nn.BN_EPS) + be[j] for j in range(layer.dim)]
            else:
                h = [max(0.0, a) for a in h]
        w, b = model.params["head.weight"], model.params["head.bias"]
        out_feats.append(h)
        out_logits.append([sum(w[c, j] * h[j] for j in range(len(h))) + b[c] for c in range(len(b))])
    return np.array(out_feats), np.array(out_logits)


def test_identity_dense_features():
    layers = [Dense(2, 2)]
    params = ParameterSet([("0.weight", np.eye(2)), ("0.bias", np.zeros(2)),
                           ("head.weight", np.zeros((0, 2))), ("head.bias", np.zeros(0))])
    model = Model(layers, params)
    feats, logits = nn.forward(model, np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(feats, [[3.0, 4.0]])
    assert logits.shape == (1, 0)


def test_bn_eval_identity_with_unit_stats():
    layers = [BatchNorm(3)]
    params = ParameterSet([("0.gamma", np.ones(3)), ("0.beta", np.zeros(3)),
                           ("head.weight", np.zeros((0, 3))), ("head.bias", np.zeros(0))])
    model = Model(layers, params)
    x = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    feats, _ = nn.forward(model, x, EVAL)
    np.testing.assert_allclose(feats, x / np.sqrt(1 + nn.BN_EPS), rtol=0, atol=1e-15)
    np.testing.assert_allclose(feats, x, atol=1e-7)


def test_forward_matches_reference(rng):
    model = randomize_bn(small_model(rng, in_dim=5, hidden=(7, 4)), rng)
    x = rng.normal(size=(6, 5))
    feats, logits = nn.forward(model, x, EVAL)
    ref_f, ref_l = reference_forward(model, x)
    np.testing.assert_allclose(feats, ref_f, rtol=0, atol=1e-12)
    np.testing.assert_allclose(logits, ref_l, rtol=0, atol=1e-12)


def test_eval_forward_is_pure(rng):
    model = randomize_bn(small_model(rng), rng)
    before = model.copy()
    x = rng.normal(size=(4, 8))
    a = nn.forward(model, x, EVAL)
    b = nn.forward(model, x, EVAL)
    np.testing.assert_array_equal(a[1], b[1])
    for name in model.bn_stats:
        np.testing.assert_array_equal(model.bn_stats[name], before.bn_stats[name])


def test_train_forward_updates_running_stats(rng):
    model = small_model(rng)
    x = rng.normal(size=(16, 8))
    h = x @ model.params["0.weight"].T + model.params["0.bias"]
    nn.forward(model, x, TRAIN)
    np.testing.assert_allclose(model.bn_stats["1.running_mean"], 0.1 * h.mean(0), atol=1e-15)
    np.testing.assert_allclose(model.bn_stats["1.running_var"], 0.9 + 0.1 * h.var(0), atol=1e-15)


def test_train_bn_output_is_standardized(rng):
    model = small_model(rng, hidden=(12,))
    x = rng.normal(2.0, 3.0, size=(64, 8))
    h = x @ model.params["0.weight"].T + model.params["0.bias"]
    _, _, cache = nn._run(model, x, TRAIN, update_stats=False)
    xhat, _ = cache[1]
    assert np.all(np.abs(xhat.mean(0)) < 1e-9)
    assert np.all(np.abs(xhat.var(0) - 1) < 1e-6)


def test_dimension_error_names_layer(rng):
    model = small_model(rng)
    with pytest.raises(DimensionError, match="layer 0"):
        nn.forward(model, np.zeros((2, 7)))


def test_uniform_logits_loss_is_log_c():
    layers = [Dense(3, 3)]
    params = ParameterSet([("0.weight", np.eye(3)), ("0.bias", np.zeros(3)),
                           ("head.weight", np.zeros((4, 3))), ("head.bias", np.zeros(4))])
    model = Model(layers, params, class_ids=[10, 11, 12, 13])
    _, loss = nn.backward(model, np.ones((5, 3)), [10, 11, 12, 13, 10], mode=EVAL)
    assert loss == pytest.approx(np.log(4), abs=1e-15)


def test_label_outside_classes_raises(rng):
    model = small_model(rng)
    with pytest.raises(ValueError, match="label 9"):
        nn.backward(model, rng.normal(size=(4, 8)), [0, 1, 9, 2])


def test_balanced_zero_head_bias_grad_sums_to_zero(rng):
    model = small_model(rng)
    model.params["head.weight"] = np.zeros_like(model.params["head.weight"])
    model.params["head.bias"] = np.zeros(3)
    grads, _ = nn.backward(model, rng.normal(size=(9, 8)), [0, 1, 2] * 3)
    assert abs(grads["head.bias"].mean()) < 1e-15
    np.testing.assert_allclose(grads["head.bias"], 0, atol=1e-15)


def finite_difference_check(model, x, y, mode, step=1e-5, rtol=1e-6, atol=1e-8):
    grads, _ = nn.backward(model, x, y, mode=mode, update_stats=False)
    worst = 0.0
    for name, value in model.params.items():
        flat = value.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = nn.backward(model, x, y, mode=mode, update_stats=False)[1]
            flat[j] = orig - step
            lm = nn.backward(model, x, y, mode=mode, update_stats=False)[1]
            flat[j] = orig
            fd = (lp - lm) / (2 * step)
            g = grads[name].ravel()[j]
            err = abs(fd - g)
            assert err <= max(atol, rtol * max(abs(fd), abs(g))), (name, j, g, fd)
            worst = max(worst, err)
    return worst


@pytest.mark.parametrize("mode", [TRAIN, EVAL])
def test_gradients_match_finite_differences(rng, mode):
    model = randomize_bn(small_model(rng, in_dim=8, hidden=(6, 5)), rng)
    x = rng.normal(size=(7, 8))
    y = rng.choice([0, 1, 2], size=7)
    finite_difference_check(model, x, y, mode)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 2), width=st.integers(2, 8),
       bn=st.booleans(), mode=st.sampled_from([TRAIN, EVAL]))
def test_gradients_property(seed, depth, width, bn, mode):
    rng = np.random.default_rng(seed)
    model = small_model(rng, in_dim=4, hidden=(width,) * depth, classes=(0, 1, 2), batchnorm=bn)
    if bn:
        randomize_bn(model, rng)
    x = rng.normal(size=(6, 4))
    finite_difference_check(model, x, rng.choice(3, size=6), mode)


def test_sgd_momentum_zero_is_plain_descent(rng):
    p = ParameterSet([("a", rng.normal(size=3))])
    g = ParameterSet([("a", rng.normal(size=3))])
    new, _ = nn.sgd_step(p, g, p.zeros_like(), lr=1.0, momentum=0.0)
    np.testing.assert_array_equal(new["a"], p["a"] - g["a"])


def test_sgd_zero_grad_uses_buffer():
    p = ParameterSet([("a", np.array([1.0, 2.0]))])
    v = ParameterSet([("a", np.array([0.5, -1.0]))])
    new, v2 = nn.sgd_step(p, p.zeros_like(), v, lr=0.1, momentum=0.9)
    np.testing.assert_allclose(new["a"], p["a"] - 0.1 * 0.9 * v["a"], atol=1e-16)
    np.testing.assert_allclose(v2["a"], 0.9 * v["a"])


def test_sgd_two_steps_recurrence():
    g = ParameterSet([("a", np.array([1.0, -2.0]))])
    p = ParameterSet([("a", np.zeros(2))])
    p1, v1 = nn.sgd_step(p, g, p.zeros_like(), 0.1, 0.9)
    p2, _ = nn.sgd_step(p1, g, v1, 0.1, 0.9)
    np.testing.assert_allclose(p["a"] - p2["a"], 0.1 * g["a"] + 0.1 * 1.9 * g["a"], atol=1e-15)


def test_sgd_rejects_bad_args():
    p = ParameterSet([("a", np.zeros(2))])
    with pytest.raises(ValueError):
        nn.sgd_step(p, p, p, lr=0.0, momentum=0.5)
    with pytest.raises(ValueError):
        nn.sgd_step(p, p, p, lr=0.1, momentum=1.0)
    with pytest.raises(DimensionError):
        nn.sgd_step(p, ParameterSet([("a", np.zeros(3))]), p, 0.1, 0.5)


def test_expand_classifier(rng):
    model = small_model(rng, classes=(0, 1, 2, 3))
    same = nn.expand_classifier(model, [], 7)
    np.testing.assert_array_equal(same.params["head.weight"], model.params["head.weight"])
    grown = nn.expand_classifier(model, [8, 9], 7)
    assert grown.params["head.weight"].shape == (6, model.feature_dim)
    assert grown.class_ids == (0, 1, 2, 3, 8, 9)
    assert grown.params["head.weight"][:4].tobytes() == model.params["head.weight"].tobytes()
    assert grown.params["head.bias"][:4].tobytes() == model.params["head.bias"].tobytes()
    s = 1 / np.sqrt(model.feature_dim)
    assert np.all(np.abs(grown.params["head.weight"][4:]) <= s)
    again = nn.expand_classifier(model, [8, 9], 7)
    np.testing.assert_array_equal(again.params["head.weight"], grown.params["head.weight"])
    np.testing.assert_array_equal(again.params["head.bias"], grown.params["head.bias"])
    with pytest.raises(ValueError, match="already"):
        nn.expand_classifier(model, [3, 4], 7)


def test_predict_returns_global_ids(rng):
    model = small_model(rng, classes=(5, 7, 9))
    preds = nn.predict(model, rng.normal(size=(10, 8)))
    assert set(preds) <= {5, 7, 9}
