import math

import numpy as np
import pytest

from odcl import gridnet
from odcl.gridnet import (Adam, ModelSpec, ParamVector, forward, init_params,
                          load_params, loss_and_grad, loss_only, predict,
                          save_params, sgd_step, snapshot, transfer)

LIN = ModelSpec(arch="linear", feat_dim=3, num_classes=3, init_seed=1)
MLP = ModelSpec(arch="mlp", feat_dim=3, num_classes=3, hidden_dim=5, init_seed=1)


def rand_frame(rng, h=4, w=4, f=3):
    return rng.normal(size=(h, w, f))


def rand_batch(rng, spec, n=2, h=4, w=4):
    return [(rand_frame(rng, h, w, spec.feat_dim),
             rng.integers(0, spec.num_classes, size=(h, w)))
            for _ in range(n)]


def test_param_counts():
    assert LIN.param_count == 3 * 3 + 3
    assert MLP.param_count == 3 * 5 + 5 + 5 * 3 + 3


def test_zero_params_give_zero_logits_and_class_zero():
    theta = ParamVector(np.zeros(LIN.param_count))
    frame = rand_frame(np.random.default_rng(0))
    logits = forward(LIN, theta, frame)
    assert np.all(logits == 0.0)
    assert np.all(predict(LIN, theta, frame) == 0)


def test_linear_model_is_linear_in_params():
    rng = np.random.default_rng(1)
    theta = ParamVector(rng.normal(size=LIN.param_count))
    frame = rand_frame(rng)
    doubled = ParamVector(2.0 * theta.values)
    assert np.allclose(forward(LIN, doubled, frame),
                       2.0 * forward(LIN, theta, frame))


def _reference_forward(spec, values, feats):
    # straightforward per-pixel loops, independent of the library path
    h, w, _ = feats.shape
    out = np.zeros((h, w, spec.num_classes))
    if spec.arch == "linear":
        wmat = values[:spec.num_classes * spec.feat_dim].reshape(
            spec.num_classes, spec.feat_dim)
        bias = values[spec.num_classes * spec.feat_dim:]
        for r in range(h):
            for c in range(w):
                for k in range(spec.num_classes):
                    out[r, c, k] = float(np.dot(wmat[k], feats[r, c])) + bias[k]
        return out
    hd = spec.hidden_dim
    o = 0
    w1 = values[o:o + hd * spec.feat_dim].reshape(hd, spec.feat_dim); o += hd * spec.feat_dim
    b1 = values[o:o + hd]; o += hd
    w2 = values[o:o + spec.num_classes * hd].reshape(spec.num_classes, hd); o += spec.num_classes * hd
    b2 = values[o:]
    for r in range(h):
        for c in range(w):
            hidden = np.tanh(w1 @ feats[r, c] + b1)
            out[r, c] = w2 @ hidden + b2
    return out


@pytest.mark.parametrize("spec", [LIN, MLP])
def test_forward_matches_reference_reimplementation(spec):
    rng = np.random.default_rng(2)
    theta = ParamVector(rng.normal(size=spec.param_count))
    frame = rand_frame(rng)
    assert np.allclose(forward(spec, theta, frame),
                       _reference_forward(spec, theta.values, frame),
                       atol=1e-12)


def test_zero_params_loss_is_log_num_classes():
    rng = np.random.default_rng(3)
    for c in (2, 3, 5):
        spec = ModelSpec(arch="linear", feat_dim=3, num_classes=c)
        theta = ParamVector(np.zeros(spec.param_count))
        batch = rand_batch(rng, spec)
        loss, _ = loss_and_grad(spec, theta, batch)
        assert loss == pytest.approx(math.log(c), abs=1e-12)


def test_saturated_model_loss_vanishes():
    spec = ModelSpec(arch="linear", feat_dim=2, num_classes=2)
    # huge weights -> logit gap -> near-zero cross-entropy on its own argmax
    theta = ParamVector(np.array([100.0, 0.0, 0.0, 100.0, 0.0, 0.0]))
    feats = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    labels = predict(spec, theta, feats)
    loss = loss_only(spec, theta, [(feats, labels)])
    assert loss < 1e-8


def central_differences(spec, theta, batch, step=1e-5, penalty=None):
    fd = np.zeros(len(theta))
    for j in range(len(theta)):
        up = ParamVector(theta.values.copy()); up.values[j] += step
        dn = ParamVector(theta.values.copy()); dn.values[j] -= step
        lu, _ = loss_and_grad(spec, up, batch, penalty)
        ld, _ = loss_and_grad(spec, dn, batch, penalty)
        fd[j] = (lu - ld) / (2.0 * step)
    return fd


def max_rel_err(analytic, fd):
    return float(np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-6)))


@pytest.mark.parametrize("spec", [LIN, MLP])
def test_gradient_matches_central_finite_differences(spec):
    rng = np.random.default_rng(4)
    for _ in range(5):
        theta = ParamVector(rng.normal(scale=0.8, size=spec.param_count))
        batch = rand_batch(rng, spec)
        _, grad = loss_and_grad(spec, theta, batch)
        assert max_rel_err(grad, central_differences(spec, theta, batch)) <= 1e-4


def test_loss_errors():
    theta = ParamVector(np.zeros(LIN.param_count))
    with pytest.raises(ValueError):
        loss_and_grad(LIN, theta, [])
    bad = [(np.zeros((2, 2, 3)), np.full((2, 2), 7))]
    with pytest.raises(ValueError):
        loss_and_grad(LIN, theta, bad)
    with pytest.raises(ValueError):
        forward(LIN, ParamVector(np.zeros(5)), np.zeros((2, 2, 3)))


def test_sgd_step_definition():
    theta = ParamVector(np.array([1.0]))
    assert sgd_step(theta, np.array([0.0]), 0.1).values[0] == 1.0
    assert sgd_step(theta, np.array([2.0]), 0.1).values[0] == pytest.approx(0.8, abs=0)
    with pytest.raises(ValueError):
        sgd_step(theta, np.array([np.nan]), 0.1)


def test_adam_first_step_direction_and_magnitude():
    rng = np.random.default_rng(5)
    g = rng.normal(size=12)
    g[np.abs(g) < 0.1] = 0.5  # keep comfortably nonzero
    theta = ParamVector(np.zeros(12))
    opt = Adam(lr=0.01)
    stepped = opt.step(theta, g)
    delta = stepped.values - theta.values
    assert np.all(np.sign(delta) == -np.sign(g))
    # hand-evaluated recursion at t=1: delta = -lr * g / (|g| + eps)
    assert np.allclose(delta, -0.01 * g / (np.abs(g) + 1e-8), atol=1e-15)


def test_snapshot_and_transfer_isolation():
    theta = ParamVector(np.array([1.0, 2.0, 3.0]))
    snap = snapshot(theta)
    theta.values[0] = 99.0
    assert snap.values[0] == 1.0

    again = snapshot(snap)
    assert np.array_equal(again.values, snap.values)

    dst = ParamVector(np.zeros(3))
    transfer(snap, dst)
    assert np.array_equal(dst.values, snap.values)
    snap.values[1] = -5.0
    assert dst.values[1] == 2.0
    with pytest.raises(ValueError):
        transfer(snap, ParamVector(np.zeros(4)))


def test_param_file_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    theta = ParamVector(rng.normal(size=17))
    path = tmp_path / "params.bin"
    save_params(path, theta)
    loaded = load_params(path)
    assert np.array_equal(loaded.values, theta.values)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_params(bad)


def test_penalty_is_added_to_loss_and_grad():
    rng = np.random.default_rng(7)
    theta = ParamVector(rng.normal(size=LIN.param_count))
    batch = rand_batch(rng, LIN)
    base_loss, base_grad = loss_and_grad(LIN, theta, batch)

    class Pen:
        value = 0.5
        grad = np.ones(LIN.param_count)

    loss, grad = loss_and_grad(LIN, theta, batch, penalty=Pen())
    assert loss == pytest.approx(base_loss + 0.5)
    assert np.allclose(grad, base_grad + 1.0)


def test_init_params_scale_and_determinism():
    spec = ModelSpec(arch="mlp", feat_dim=8, num_classes=4, hidden_dim=16,
                     init_seed=9, init_scale=1.0)
    a = init_params(spec)
    b = init_params(spec)
    assert np.array_equal(a.values, b.values)
    assert len(a) == spec.param_count
    assert np.abs(a.values).max() < 5.0
