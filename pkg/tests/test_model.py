import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mio import model as M
from mio import nn
from mio.errors import CheckpointMismatch, DivergedLoss, EmptyDataset, EmptyWindow, GraphNotRecorded, ShapeMismatch
from mio.imaging import PanoramicImage
from mio.se3 import SixDof

SMALL = M.ModelConfig(height=8, width=16)


def zero_gating(params):
    for n in ("att.Wa", "att.ca", "att.Wb", "att.cb"):
        params[n].data[...] = 0.0
    return params


def random_batch(rng, cfg=SMALL, B=2, T=3, L=10):
    return M.Batch(rng.random((B, T, 2, cfg.height, cfg.width)), rng.normal(size=(B, T, L, 6)),
                   rng.integers(1, L + 1, (B, T)), 0.1 * rng.normal(size=(B, T, 6)), np.ones((B, T)))


def test_default_architecture():
    p = M.ModelParams.init()
    assert p.config.radar_features == 32 * 2 * 8 == 512
    assert p.config.fused_features == 544
    assert len(p.names()) == 22
    assert p.count() < 10 ** 6
    assert p.all_finite()


def test_init_is_seeded_and_bounded():
    a = M.ModelParams.init(SMALL, seed=3)
    b = M.ModelParams.init(SMALL, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)
    for n, (shape, fan_in) in M._param_shapes(SMALL).items():
        assert np.abs(a[n].data).max() <= 1 / math.sqrt(fan_in)


# --- radar encoder ---

def test_radar_encoder_zero_chain():
    p = M.ModelParams.init(M.ModelConfig(), 0)
    for i in (1, 2, 3):
        p[f"conv{i}.b"].data[...] = 0
    out = M.radar_encoder(np.zeros((2, 16, 64)), p)
    assert out.shape == (512,)
    assert not out.any()


def test_radar_encoder_finite_and_shape_checked(rng):
    p = M.ModelParams.init(M.ModelConfig(), 1)
    assert np.all(np.isfinite(M.radar_encoder(rng.random((2, 16, 64)), p)))
    with pytest.raises(ShapeMismatch):
        M.radar_encoder(rng.random((2, 8, 64)), p)


@pytest.mark.parametrize("H, W", [(8, 8), (16, 32), (24, 40), (32, 64)])
def test_shape_stability(H, W, rng):
    cfg = M.ModelConfig(height=H, width=W)
    p = M.ModelParams.init(cfg, 0)
    assert cfg.radar_features == 32 * math.ceil(H / 8) * math.ceil(W / 8)
    img = PanoramicImage(rng.random((H, W)), 0.0)
    motion, h = M.infer_pair(img, img, rng.normal(size=(5, 6)), None, p)
    assert motion.as_vector().shape == (6,)
    assert h.shape == (64,)


# --- imu encoder ---

def test_imu_encoder_zero():
    out = M.imu_encoder(np.zeros((7, 6)), M.ModelParams.zeros(SMALL))
    assert out.shape == (32,) and not out.any()


def test_imu_encoder_empty_window():
    with pytest.raises(EmptyWindow):
        M.imu_encoder([], M.ModelParams.init(SMALL))


def test_imu_encoder_length_blind_with_zero_input_weights(rng):
    p = M.ModelParams.init(SMALL, 2)
    p["imu.Wx"].data[...] = 0
    p["imu.Wh"].data[...] = 0
    a = M.imu_encoder(rng.normal(size=(3, 6)), p)
    b = M.imu_encoder(rng.normal(size=(9, 6)), p)
    np.testing.assert_allclose(a, b)


def test_imu_encoder_is_order_sensitive(rng):
    p = M.ModelParams.init(SMALL, 4)
    w = rng.normal(size=(10, 6))
    assert not np.allclose(M.imu_encoder(w, p), M.imu_encoder(w[::-1], p))


def test_imu_padding_is_ignored(rng):
    p = M.ModelParams.init(SMALL, 5)
    w = rng.normal(size=(6, 6))
    b1 = M.Batch(np.zeros((1, 1, 2, 8, 16)), w[None, None], np.array([[6]]))
    padded = np.concatenate([w, rng.normal(size=(4, 6))])
    b2 = M.Batch(np.zeros((1, 1, 2, 8, 16)), padded[None, None], np.array([[6]]))
    np.testing.assert_array_equal(M.forward(p, b1, record=False).pred, M.forward(p, b2, record=False).pred)


# --- attention ---

def test_zero_gating_halves(rng):
    p = zero_gating(M.ModelParams.init(SMALL, 0))
    F = SMALL.radar_features
    a, b = rng.normal(size=F), rng.normal(size=32)
    np.testing.assert_allclose(M.mixed_attention_fuse(a, b, p), np.concatenate([a, b]) / 2)


def test_zero_radar_feature_passes_zero(rng):
    p = M.ModelParams.init(SMALL, 1)
    F = SMALL.radar_features
    out = M.mixed_attention_fuse(np.zeros(F), rng.normal(size=32), p)
    assert not out[:F].any()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_masks_bounded_and_fusion_contracts(seed):
    rng = np.random.default_rng(seed)
    p = M.ModelParams.init(SMALL, seed, scale=2.0)
    F = SMALL.radar_features
    a, b = rng.normal(size=F), rng.normal(size=32)
    ma, mb = M.attention_masks(a, b, p)
    assert np.all((ma > 0) & (ma < 1)) and np.all((mb > 0) & (mb < 1))
    fused = M.mixed_attention_fuse(a, b, p)
    assert np.all(np.abs(fused) <= np.abs(np.concatenate([a, b])))


def test_fuse_shape_checked():
    with pytest.raises(ShapeMismatch):
        M.mixed_attention_fuse(np.zeros(3), np.zeros(32), M.ModelParams.init(SMALL))


def test_sigmoid_is_stable():
    x = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    with np.errstate(over="raise", invalid="raise"):
        s = nn.sigmoid(x)
    assert np.all(np.isfinite(s)) and np.all(np.diff(s) >= 0)
    assert s[2] == 0.5 and s[0] >= 0.0 and s[-1] == 1.0


# --- temporal / regression ---

def test_temporal_zero():
    p = M.ModelParams.zeros(SMALL)
    out, h = M.temporal_step(np.zeros(SMALL.fused_features), np.zeros(64), p)
    assert not out.any() and not h.any()


def test_temporal_range_and_state(rng):
    p = M.ModelParams.init(SMALL, 3)
    x = rng.normal(size=SMALL.fused_features)
    h1, _ = M.temporal_step(x, np.zeros(64), p)
    h2, _ = M.temporal_step(x, rng.uniform(-1, 1, 64), p)
    assert np.all(np.abs(h1) < 1)
    assert not np.allclose(h1, h2)
    with pytest.raises(ShapeMismatch):
        M.temporal_step(x, np.zeros(10), p)


def test_regress_zero_and_shape(rng):
    assert M.regress(np.zeros(64), M.ModelParams.zeros(SMALL)).as_vector().tolist() == [0.0] * 6
    out = M.regress(rng.uniform(-1, 1, 64), M.ModelParams.init(SMALL, 1))
    assert out.as_vector().shape == (6,)
    with pytest.raises(ShapeMismatch):
        M.regress(np.zeros(63), M.ModelParams.init(SMALL))


def test_last_layer_bias_is_additive(rng):
    p = M.ModelParams.init(SMALL, 8)
    h = rng.uniform(-1, 1, 64)
    beta = rng.normal(size=6)
    p["fc3.b"].data[...] = 0
    base = M.regress(h, p).as_vector()
    p["fc3.b"].data[...] = beta
    np.testing.assert_allclose(M.regress(h, p).as_vector() - base, beta, atol=1e-12)


# --- loss ---

@pytest.mark.parametrize("pred, target, lam, expected", [
    (SixDof((1, 2, 3), (0.1, 0.2, 0.3)), SixDof((1, 2, 3), (0.1, 0.2, 0.3)), 100, 0.0),
    (SixDof((1, 0, 0), (0, 0, 0)), SixDof((0, 0, 0), (0, 0, 0)), 7.0, 1.0),
    (SixDof((0, 0, 0), (0, 0, 0.1)), SixDof((0, 0, 0), (0, 0, 0)), 100, 1.0),
])
def test_loss_examples(pred, target, lam, expected):
    assert M.loss(pred, target, lam) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=12, max_size=12), st.floats(0.1, 500))
def test_loss_symmetry(v, lam):
    a, b = SixDof.from_vector(v[:6]), SixDof.from_vector(v[6:])
    assert M.loss(a, b, lam) == pytest.approx(M.loss(b, a, lam), rel=1e-12, abs=1e-12)


def test_loss_wraps_euler():
    eps = 0.03
    a = M.loss(SixDof((0, 0, 0), (0, 0, 2 * math.pi - eps)), SixDof((0, 0, 0), (0, 0, 0)))
    b = M.loss(SixDof((0, 0, 0), (0, 0, -eps)), SixDof((0, 0, 0), (0, 0, 0)))
    assert abs(a - b) <= 1e-12


# --- backward ---

def test_backward_requires_graph(rng):
    p = M.ModelParams.init(SMALL)
    batch = random_batch(rng)
    rec = M.forward(p, batch)
    rec.record_loss(batch.targets, 100.0)
    M.backward(rec)
    with pytest.raises(GraphNotRecorded):
        M.backward(rec)
    with pytest.raises(GraphNotRecorded):
        M.backward(M.forward(p, batch, record=False), np.zeros((2, 3, 6)))


def test_bias_gradient_vanishes_at_minimum(rng):
    p = M.ModelParams.init(SMALL, 2)
    batch = random_batch(rng)
    rec = M.forward(p, batch)
    batch.targets = rec.pred.copy()
    rec.record_loss(batch.targets, 100.0)
    M.backward(rec)
    assert rec.loss == 0.0
    assert not p["fc3.b"].grad.any()


def test_unused_parameter_has_zero_gradient(rng):
    p = M.ModelParams.init(SMALL, 2)
    batch = random_batch(rng)
    batch.pairs[...] = 0.0
    rec = M.forward(p, batch)
    rec.record_loss(batch.targets, 100.0)
    M.backward(rec)
    assert not p["conv1.W"].grad.any()
    assert p["conv1.b"].grad.any()


def test_grad_buffers_reset_each_pass(rng):
    p = M.ModelParams.init(SMALL, 2)
    batch = random_batch(rng)
    grads = []
    for _ in range(2):
        rec = M.forward(p, batch)
        rec.record_loss(batch.targets, 100.0)
        M.backward(rec)
        grads.append(p["fc1.W"].grad.copy())
    np.testing.assert_array_equal(grads[0], grads[1])


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_small_model(seed):
    rng = np.random.default_rng(seed)
    p = M.ModelParams.init(SMALL, seed)
    batch = random_batch(rng)
    report = M.check_gradients(p, batch, 0.5 * rng.normal(size=(2, 64)), seed=seed)
    assert set(report) >= set(p.names()) | {"input.pairs", "input.imu", "input.h0"}
    bad = {k: v for k, v in report.items() if v > 1e-4}
    assert not bad


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 5, 6))
    W = nn.Tensor(rng.normal(size=(3, 2, 3, 3)))
    b = nn.Tensor(rng.normal(size=3))
    y, _ = nn.conv2d_forward(x, W, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(y.shape[2]):
            for j in range(y.shape[3]):
                patch = xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                assert y[0, o, i, j] == pytest.approx((patch * W.data[o]).sum() + b.data[o])


# --- training ---

def tiny_dataset(rng, n_seq=2, n=6):
    seqs = []
    for _ in range(n_seq):
        samples = [(rng.random((2, 8, 16)), rng.normal(size=(int(rng.integers(0, 12)), 6)),
                    0.1 * rng.normal(size=6)) for _ in range(n)]
        seqs.append(M.SequenceData.from_samples(samples))
    return seqs


def test_training_is_deterministic(rng):
    data = tiny_dataset(rng)
    cfg = M.TrainingConfig(epochs=4, batch_size=1, rng_seed=5)
    a = M.train(data, cfg)
    b = M.train(data, cfg)
    assert a.losses == b.losses
    for x, y in zip(a.params, b.params):
        np.testing.assert_array_equal(x.data, y.data)


def test_zero_learning_rate_keeps_loss_constant(rng):
    data = tiny_dataset(rng)
    res = M.train(data, M.TrainingConfig(learning_rate=0.0, epochs=5, rng_seed=1))
    assert len(set(res.losses)) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_errors(rng):
    with pytest.raises(EmptyDataset):
        M.train([], M.TrainingConfig(epochs=1))
    with pytest.raises(DivergedLoss):
        M.train(tiny_dataset(rng), M.TrainingConfig(learning_rate=1e6, epochs=20, rng_seed=0))
    with pytest.raises(ValueError):
        M.TrainingConfig(rot_weight=0)


def test_overfit_single_sample(rng):
    sample = (rng.random((2, 8, 16)), rng.normal(size=(10, 6)), np.array([0.1, -0.05, 0.0, 0.0, 0.0, 0.03]))
    data = [M.SequenceData.from_samples([sample])]
    res = M.train(data, M.TrainingConfig(learning_rate=0.002, epochs=500, batch_size=1, rng_seed=0))
    assert res.losses[-1] <= 0.05 * res.losses[0]
    img = lambda k: PanoramicImage(sample[0][k], 0.0)  # noqa: E731
    motion, _ = M.infer_pair(img(0), img(1), sample[1], None, res.params)
    err = motion.as_vector() - sample[2]
    assert np.abs(err[:3]).max() <= 1e-2 and np.abs(err[3:]).max() <= 1e-2


# --- inference / checkpoint ---

def test_zero_params_give_identity_motion(rng):
    img = PanoramicImage(rng.random((8, 16)), 0.0)
    motion, h = M.infer_pair(img, img, rng.normal(size=(10, 6)), None, M.ModelParams.zeros(SMALL))
    assert motion.as_vector().tolist() == [0.0] * 6
    assert not h.any()


def test_infer_pair_is_deterministic_and_accepts_gaps(rng):
    p = M.ModelParams.init(SMALL, 9)
    img = PanoramicImage(rng.random((8, 16)), 0.0)
    w = rng.normal(size=(10, 6))
    a = M.infer_pair(img, img, w, None, p)
    b = M.infer_pair(img, img, w, None, p)
    np.testing.assert_array_equal(a[0].as_vector(), b[0].as_vector())
    gap, _ = M.infer_pair(img, img, [], None, p)
    assert np.all(np.isfinite(gap.as_vector()))


def test_checkpoint_round_trip(tmp_path):
    p = M.ModelParams.init(SMALL, 4)
    path = tmp_path / "m.mio"
    M.save_checkpoint(p, path, extra={"losses": [1.0, 0.5]})
    raw = path.read_bytes()
    assert raw[:4] == b"MIOM"
    q = M.load_checkpoint(path)
    assert q.config == p.config
    for x, y in zip(p, q):
        np.testing.assert_array_equal(x.data, y.data)
    assert M.checkpoint_header(path)["extra"]["losses"] == [1.0, 0.5]


def test_checkpoint_corruption(tmp_path):
    p = M.ModelParams.init(SMALL, 4)
    path = tmp_path / "m.mio"
    M.save_checkpoint(p, path)
    raw = path.read_bytes()
    (tmp_path / "bad.mio").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.mio").write_bytes(raw[:-8])
    for name in ("bad.mio", "short.mio"):
        with pytest.raises(CheckpointMismatch):
            M.load_checkpoint(tmp_path / name)
