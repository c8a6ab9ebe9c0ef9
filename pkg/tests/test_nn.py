import math

import numpy as np
import pytest

from gradcheck import check, tensors
from wearmocap.errors import DataShapeMismatch, GraphNotRecorded, ShapeMismatch
from wearmocap.nn import autograd as ag
from wearmocap.nn.layers import (
    birnn_forward,
    init_linear,
    init_lstm,
    init_mlp,
    lstm_direction,
    mlp_forward,
)
from wearmocap.nn.losses import (
    JOINT_LOSS_WEIGHTS,
    decayed_lambda,
    loss_kd_feat,
    loss_kd_output,
    loss_pose,
    loss_student,
    loss_teacher,
    loss_trans,
)
from wearmocap.nn.model import (
    ModelConfig,
    ModelInputs,
    imu_vector,
    init_model,
    load_params,
    model_forward,
    params_from_dict,
    params_to_dict,
    save_params,
)
from wearmocap.nn.optim import AdamState, adam_step

TOL = 1e-4


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


# ---------------------------------------------------------------- autograd basics

def test_square_gradient():
    x = ag.Tensor(3.0, requires_grad=True)
    g = ag.backward(ag.square(x), {"x": x})
    assert g["x"] == 6.0


def test_unreached_params_get_zero():
    a = ag.Tensor(np.ones(3), requires_grad=True)
    b = ag.Tensor(np.ones(2), requires_grad=True)
    g = ag.backward(ag.total(a * 2.0), {"a": a, "b": b})
    assert np.array_equal(g["b"], np.zeros(2)) and np.array_equal(g["a"], np.full(3, 2.0))


def test_backward_errors():
    with pytest.raises(GraphNotRecorded):
        ag.backward(ag.Tensor(1.0))
    x = ag.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        ag.backward(x * 2.0)
    with ag.no_grad():
        y = ag.total(x * 2.0)
    with pytest.raises(GraphNotRecorded):
        ag.backward(y)


def test_tensor_dim_limit():
    with pytest.raises(ShapeMismatch):
        ag.Tensor(np.zeros((1, 1, 1, 1)))


def test_repeated_backward_is_not_accumulated():
    x = ag.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ag.total(ag.square(x))
    g1 = ag.backward(loss, {"x": x})["x"].copy()
    g2 = ag.backward(loss, {"x": x})["x"]
    assert np.array_equal(g1, g2)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "exp", "log", "relu", "sigmoid", "tanh",
                                "matmul", "reshape", "getitem", "concat", "stack", "mean", "broadcast"])
def test_op_gradients(op):
    rng = np.random.default_rng(abs(hash(op)) % 1000)
    for _ in range(5):
        p = tensors(rng, a=(3, 4), b=(3, 4), c=(4, 2), v=(4,))
        p["a"].data = p["a"].data + np.sign(p["a"].data) * 0.05  # keep relu away from its kink
        w = rng.normal(size=(3, 4))

        def build(p):
            a, b, c, v = p["a"], p["b"], p["c"], p["v"]
            out = {
                "add": lambda: a + b,
                "sub": lambda: a - b,
                "mul": lambda: a * b,
                "div": lambda: a / 2.5,
                "exp": lambda: ag.exp(a * 0.3),
                "log": lambda: ag.log(ag.square(a) + 1.0),
                "relu": lambda: ag.relu(a),
                "sigmoid": lambda: ag.sigmoid(a),
                "tanh": lambda: ag.tanh(a),
                "matmul": lambda: ag.matmul(a, c),
                "reshape": lambda: ag.reshape(a, (2, 6)),
                "getitem": lambda: a[1:, ::2] * 3.0,
                "concat": lambda: ag.concat([a, b[:, :2]], axis=-1),
                "stack": lambda: ag.stack([a, b], axis=1),
                "mean": lambda: ag.mean(a * b),
                "broadcast": lambda: a * v + v,
            }[op]()
            ww = np.resize(w, out.shape) if out.shape != w.shape else w
            return ag.total(out * ww)

        assert check(build, p) < TOL


# ---------------------------------------------------------------- layers

def test_mlp_zero_weights_zero_output():
    rng = np.random.default_rng(0)
    params = {}
    init_mlp(params, "m", (6, 5, 4), rng)
    for t in params.values():
        t.data[:] = 0.0
    assert np.array_equal(mlp_forward(params, rng.normal(size=(3, 6)), "m").data, np.zeros((3, 4)))


def test_identity_single_layer_passthrough():
    params = {}
    init_linear(params, "m.0", 5, 5, np.random.default_rng(0))
    params["m.0.weight"].data = np.eye(5)
    x = np.random.default_rng(1).normal(size=(4, 5))
    assert np.array_equal(mlp_forward(params, x, "m").data, x)


def test_mlp_matches_straight_line_evaluation():
    rng = np.random.default_rng(2)
    params = {}
    init_mlp(params, "m", (7, 9, 4), rng)
    for t in params.values():
        t.data = rng.normal(size=t.shape)
    x = rng.normal(size=(5, 7))
    W0, b0, W1, b1 = (params[k].data for k in ("m.0.weight", "m.0.bias", "m.1.weight", "m.1.bias"))
    expect = np.maximum(x @ W0 + b0, 0) @ W1 + b1
    assert np.max(np.abs(mlp_forward(params, x, "m").data - expect)) < 1e-12


def test_mlp_shape_mismatch():
    params = {}
    init_mlp(params, "m", (6, 4), np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        mlp_forward(params, np.zeros((2, 5)), "m")


def _lstm_params(rng, D, H, out):
    p = {}
    init_lstm(p, "r.fwd", D, H, rng)
    init_lstm(p, "r.bwd", D, H, rng)
    init_linear(p, "head", 2 * H, out, rng)
    for t in p.values():
        t.data = rng.normal(scale=0.5, size=t.shape)
    return p


def _cell_unrolled(W_ih, W_hh, b, xs):
    H = W_hh.shape[0]
    h = np.zeros(H)
    c = np.zeros(H)
    hs = []
    for x in xs:
        z = x @ W_ih + h @ W_hh + b
        i, f, g, o = _sigmoid(z[:H]), _sigmoid(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), _sigmoid(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return hs


def test_birnn_matches_unrolled_equations():
    rng = np.random.default_rng(3)
    D, H = 4, 3
    p = _lstm_params(rng, D, H, 5)
    x = rng.normal(size=(1, 2, D))
    out = birnn_forward(p, x, "r", "head").data[0]
    g = lambda k: p[k].data
    fw = _cell_unrolled(g("r.fwd.w_ih"), g("r.fwd.w_hh"), g("r.fwd.bias"), x[0])
    bw = _cell_unrolled(g("r.bwd.w_ih"), g("r.bwd.w_hh"), g("r.bwd.bias"), x[0][::-1])[::-1]
    for t in range(2):
        expect = np.concatenate([fw[t], bw[t]]) @ g("head.weight") + g("head.bias")
        assert np.max(np.abs(out[t] - expect)) < 1e-12


def test_birnn_single_frame_finite():
    rng = np.random.default_rng(4)
    p = _lstm_params(rng, 4, 3, 147)
    out = birnn_forward(p, rng.normal(size=(2, 1, 4)), "r", "head")
    assert out.shape == (2, 1, 147) and np.all(np.isfinite(out.data))


def test_saturated_gates_ignore_input():
    rng = np.random.default_rng(5)
    D, H = 4, 3
    p = _lstm_params(rng, D, H, 2)
    for d in ("fwd", "bwd"):
        p[f"r.{d}.w_ih"].data[:] = 0
        p[f"r.{d}.w_hh"].data[:] = 0
        b = np.zeros(4 * H)
        b[:H] = -1e3  # input gate closed
        b[H:2 * H] = 1e3  # forget gate open
        p[f"r.{d}.bias"].data = b
    a = birnn_forward(p, rng.normal(size=(1, 6, D)), "r", "head").data
    b_ = birnn_forward(p, rng.normal(size=(1, 6, D)), "r", "head").data
    assert np.array_equal(a, b_)


def test_lstm_default_forget_bias():
    p = {}
    init_lstm(p, "x", 3, 4, np.random.default_rng(0))
    assert np.array_equal(p["x.bias"].data[4:8], np.ones(4))
    assert np.array_equal(p["x.bias"].data[:4], np.zeros(4))


def test_layer_gradients():
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = {}
        init_mlp(p, "m", (5, 6, 3), rng)
        for t in p.values():
            t.data = rng.normal(size=t.shape)
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(4, 3))
        assert check(lambda p: ag.total(mlp_forward(p, x, "m") * w), p) < TOL

        q = _lstm_params(rng, 3, 2, 4)
        xs = rng.normal(size=(2, 3, 3))
        w2 = rng.normal(size=(2, 3, 4))
        assert check(lambda q: ag.total(birnn_forward(q, xs, "r", "head") * w2), q) < TOL
        assert check(lambda q: ag.total(ag.square(lstm_direction(q, "r.bwd", ag.Tensor(xs), reverse=True))), q) < TOL


# ---------------------------------------------------------------- losses

def test_loss_pose_hand_values():
    gt = np.zeros((24, 6))
    pred = gt.copy()
    assert float(loss_pose(pred, gt)) == 0.0
    pred[0] = 1.0
    assert abs(float(loss_pose(pred, gt)) - 0.25) < 1e-12
    pred = gt.copy()
    pred[20, 0] = 1.0
    assert abs(float(loss_pose(pred, gt)) - 0.4 / 24) < 1e-12


def test_joint_weights_table():
    w = dict(zip(range(24), JOINT_LOSS_WEIGHTS))
    assert w[0] == 1.0 and w[1] == w[2] == 0.2 and w[3] == w[6] == w[9] == 0.1
    assert w[4] == w[5] == w[7] == w[8] == w[10] == w[11] == 0.3
    assert w[12] == 0.1 and w[13] == w[14] == 0.3 and w[15] == 0.3
    assert w[16] == w[17] == 0.2 and w[18] == w[19] == 0.3
    assert w[20] == w[21] == w[22] == w[23] == 0.4
    assert np.all(JOINT_LOSS_WEIGHTS > 0)


def test_loss_trans():
    assert float(loss_trans(np.zeros(3), np.zeros(3))) == 0.0
    assert abs(float(loss_trans(np.array([0.03, 0, 0.04]), np.zeros(3))) - 0.0025) < 1e-15
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    assert abs(float(loss_trans(a, b)) - np.sum((a - b) ** 2) / 6) < 1e-12


def test_loss_teacher_values():
    assert float(loss_teacher(0.7, 0.2, 0.0, 0.0)) == 0.7 + 0.2
    assert abs(float(loss_teacher(1.0, 0.0, math.log(2), 0.0)) - (0.5 + math.log(2))) < 1e-15


def test_loss_teacher_log_variance_gradient():
    for L in (0.3, 1.0, 2.5):
        for s0 in (-1.0, 0.0, 0.7):
            s = ag.Tensor(s0, requires_grad=True)
            g = ag.backward(loss_teacher(L, 0.1, s, 0.0), {"s": s})["s"]
            assert abs(g - (1 - L * math.exp(-s0))) < 1e-12
        # stationary point at sigma^2 = L
        s = ag.Tensor(math.log(L), requires_grad=True)
        assert abs(ag.backward(loss_teacher(L, 0.1, s, 0.0), {"s": s})["s"]) < 1e-12


def test_kd_losses():
    a = np.zeros((24, 6))
    b = a.copy()
    b[7] = 1.0
    assert float(loss_kd_output(a, a)) == 0.0
    assert abs(float(loss_kd_output(a, b)) - 0.25) < 1e-15
    assert float(loss_kd_output(a, b)) == float(loss_kd_output(b, a))
    u = np.zeros(128)
    assert float(loss_kd_feat(u, u)) == 0.0
    assert float(loss_kd_feat(u, u + 1)) == 1.0
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=128), rng.normal(size=128)
    assert abs(float(loss_kd_feat(x, y)) - np.mean((x - y) ** 2)) < 1e-12
    with pytest.raises(ShapeMismatch):
        loss_kd_feat(np.zeros(128), np.zeros(64))


def test_loss_student():
    assert float(loss_student(1, 2, 4, 0, 0, 0)) == 0.0
    assert float(loss_student(1, 2, 4, 1.0, 0.5, 0.5)) == 4.0
    with pytest.raises(ValueError):
        loss_student(1, 2, 4, 1.0, -0.5, 0.5)


def test_lambda_decay():
    assert decayed_lambda(0, 0.5) == 0.5
    assert decayed_lambda(9, 0.5) == 0.5
    assert decayed_lambda(20, 0.5) == 0.32 and decayed_lambda(30, 0.5) == 0.256
    assert decayed_lambda(25, 0.5) == 0.32


def test_losses_nonnegative_and_zero_on_equal():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.normal(size=(5, 144)), rng.normal(size=(5, 144))
        assert float(loss_pose(a, b)) > 0 and float(loss_pose(a, a)) == 0
        assert float(loss_kd_output(a, b)) > 0
        t = rng.normal(size=(5, 3))
        assert float(loss_trans(t, t)) == 0


def test_loss_gradients():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = tensors(rng, pr=(3, 144), gr=(3, 144), pt=(3, 3), s1=(), s2=(), u=(3, 8), v=(3, 8))
        gt_t = rng.normal(size=(3, 3))
        assert check(lambda p: loss_pose(p["pr"], p["gr"]), p) < TOL
        assert check(lambda p: loss_trans(p["pt"], gt_t), p) < TOL
        assert check(lambda p: loss_teacher(loss_pose(p["pr"], p["gr"]), loss_trans(p["pt"], gt_t),
                                            p["s1"], p["s2"]), p) < TOL
        assert check(lambda p: loss_kd_output(p["gr"], p["pr"]), p) < TOL
        assert check(lambda p: loss_kd_feat(p["u"], p["v"]), p) < TOL
        assert check(lambda p: loss_student(loss_trans(p["pt"], gt_t), loss_kd_output(p["gr"], p["pr"]),
                                            loss_kd_feat(p["u"], p["v"]), 1.0, 0.5, 0.3), p) < TOL


# ---------------------------------------------------------------- optimizer

def test_adam_zero_gradient_no_change():
    p = {"w": ag.Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 1e-3)
    assert np.array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_sign():
    g = np.array([0.3, -5.0, 1e-3])
    p = {"w": ag.Tensor(np.zeros(3), requires_grad=True)}
    adam_step(p, {"w": g}, AdamState(), 0.01)
    assert np.allclose(p["w"].data, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_constant_gradient_monotone():
    p = {"w": ag.Tensor(np.array(0.0), requires_grad=True)}
    st = AdamState()
    xs = []
    for _ in range(100):
        adam_step(p, {"w": np.array(2.0)}, st, 0.1)
        xs.append(float(p["w"].data))
    assert all(b < a for a, b in zip(xs, xs[1:]))


def test_adam_per_parameter_rates():
    p = {"a": ag.Tensor(np.zeros(1), requires_grad=True), "b": ag.Tensor(np.zeros(1), requires_grad=True)}
    adam_step(p, {"a": np.ones(1), "b": np.ones(1)}, AdamState(), {"a": 1e-3, "b": 0.0})
    assert p["b"].data[0] == 0.0 and p["a"].data[0] < 0


def test_adam_minimizes_quadratic():
    p = {"w": ag.Tensor(np.array([3.0, -2.0]), requires_grad=True)}
    st = AdamState()
    for _ in range(2000):
        loss = ag.total(ag.square(p["w"] - np.array([1.0, 0.5])))
        adam_step(p, ag.backward(loss, p), st, 0.05)
    assert np.allclose(p["w"].data, [1.0, 0.5], atol=1e-3)


# ---------------------------------------------------------------- model

def _small_config(n=5):
    return ModelConfig(n_sensors=n, encoder_hidden=6, feature_dim=5, visual_dim=7, adapter_dim=3, rnn_hidden=4)


def _inputs(rng, cfg, B=2, T=3):
    return ModelInputs(rng.normal(size=(B, T, cfg.n_sensors, 12)), np.ones((B, T, cfg.n_sensors)),
                       rng.normal(size=(B, T, 3, cfg.visual_dim)), rng.normal(size=(B, T, 12)))


def test_full_size_shapes():
    cfg = ModelConfig()
    p = init_model(cfg, 0)
    assert p["imu_encoder.0.weight"].shape == (60, 256)
    assert p["imu_encoder.1.weight"].shape == (256, 128)
    assert p["visual_adapters.forward.weight"].shape == (512, 64)
    assert p["fusion_rnn.fwd.w_ih"].shape == (332, 512)
    assert p["output_head.weight"].shape == (256, 147)
    assert p["log_var_pose"].shape == () and float(p["log_var_pose"].data) == 0.0
    out = model_forward(p, _inputs(np.random.default_rng(0), cfg, 1, 2))
    assert out.pred.shape == (1, 2, 147) and out.imu_features.shape == (2, 128)


def test_model_deterministic_forward():
    cfg = _small_config()
    p = init_model(cfg, 3)
    x = _inputs(np.random.default_rng(1), cfg)
    assert np.array_equal(model_forward(p, x).pred.data, model_forward(p, x).pred.data)
    assert np.array_equal(init_model(cfg, 3)["output_head.weight"].data, p["output_head.weight"].data)


def test_model_input_shape_checks():
    cfg = _small_config()
    p = init_model(cfg, 0)
    x = _inputs(np.random.default_rng(0), _small_config(3))
    with pytest.raises(DataShapeMismatch):
        model_forward(p, x)


def test_invalid_sensors_are_zeroed_and_acc_scaled():
    rng = np.random.default_rng(2)
    imu = rng.normal(size=(1, 2, 3, 12))
    valid = np.array([[[1, 0, 1], [0, 1, 1]]], dtype=float)
    v = imu_vector(imu, valid).reshape(2, 3, 12)
    assert np.array_equal(v[0, 1], np.zeros(12))
    assert np.allclose(v[0, 0, 9:], imu[0, 0, 0, 9:] / 9.81)
    assert np.array_equal(v[0, 0, :9], imu[0, 0, 0, :9])


def test_model_gradients():
    rng = np.random.default_rng(8)
    cfg = _small_config()
    for _ in range(5):  # the acceptance suite runs the full 20
        p = init_model(cfg, int(rng.integers(1 << 30)))
        p["log_var_pose"].data = np.array(rng.normal())
        x = _inputs(rng, cfg, B=1, T=2)
        gt_r = rng.normal(size=(2, 144))
        gt_t = rng.normal(size=(2, 3))

        def build(t):
            out = model_forward(p, x)
            return loss_teacher(loss_pose(out.rot, gt_r), loss_trans(out.trans, gt_t),
                                t["log_var_pose"], t["log_var_trans"])

        assert check(build, p.tensors) < TOL


def test_checkpoint_roundtrip(tmp_path):
    p = init_model(_small_config(), 4)
    save_params(tmp_path / "p.json", p, {"role": "teacher"})
    q = load_params(tmp_path / "p.json")
    assert q.config == p.config
    for k in p.names():
        assert np.array_equal(p[k].data, q[k].data)
    d = params_to_dict(p)
    d["version"] = 99
    with pytest.raises(ValueError):
        params_from_dict(d)
