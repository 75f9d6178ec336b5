import math

import numpy as np
import pytest
from oracles import central_difference, cnn_forward_direct, rel_err

from shieldlab import nn
from shieldlab.core import ShapeError
from shieldlab.data import generate_synthetic


def random_params(seed, scale=1.0):
    p = nn.init_params(seed)
    rng = np.random.default_rng(seed + 1000)
    for name in ("conv1_b", "conv2_b", "dense_b"):
        p.arrays[name] = rng.normal(0, 0.1, p.arrays[name].shape)
    for name in nn.WEIGHT_NAMES:
        p.arrays[name] = p.arrays[name] * scale
    return p


def test_zero_params_give_zero_logits():
    x = np.random.default_rng(0).random((32, 32))
    assert np.array_equal(nn.forward(nn.zero_params(), x), np.zeros(10))


def test_forward_matches_direct_convolution():
    p = random_params(1)
    x = np.random.default_rng(2).random((32, 32))
    assert np.abs(nn.forward(p, x) - cnn_forward_direct(p.arrays, x)).max() < 1e-9


def test_batch_rows_equal_single_forward():
    p = random_params(3)
    xs = np.random.default_rng(4).random((5, 32, 32))
    batch = nn.forward(p, xs)
    for i in range(5):
        assert np.allclose(batch[i], nn.forward(p, xs[i]), rtol=0, atol=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.forward(nn.init_params(0), np.zeros((28, 28)))


def test_backward_zero_cotangent():
    p = random_params(5)
    x = np.random.default_rng(6).random((32, 32))
    grads, dx = nn.backward(p, x, np.zeros(10))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dx == 0)


def test_backward_cotangent_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.backward(nn.init_params(0), np.zeros((32, 32)), np.zeros(9))


def _scalar_probe(p, x, ct):
    return float(ct @ nn.forward(p, x))


@pytest.mark.parametrize("seed", range(5))
def test_parameter_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_params(10 + seed)
    x = rng.random((32, 32))
    ct = rng.normal(size=10)
    grads, _ = nn.backward(p, x, ct)
    for name in nn.PARAM_NAMES:
        d = rng.normal(size=p.arrays[name].shape)
        d /= np.linalg.norm(d)

        def f(w, name=name):
            q = p.copy()
            q.arrays[name] = w
            return _scalar_probe(q, x, ct)

        fd = central_difference(f, p.arrays[name], d, h=1e-6)
        assert rel_err(np.sum(grads[name] * d), fd) <= 1e-3, name


@pytest.mark.parametrize("seed", range(5))
def test_input_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_params(20 + seed)
    x = rng.random((32, 32))
    ct = rng.normal(size=10)
    _, dx = nn.backward(p, x, ct)
    d = rng.normal(size=x.shape)
    d /= np.linalg.norm(d)
    fd = central_difference(lambda z: _scalar_probe(p, z, ct), x, d, h=1e-6)
    assert rel_err(np.sum(dx * d), fd) <= 1e-3


def test_batched_backward_sums_parameter_gradients():
    p = random_params(7)
    rng = np.random.default_rng(8)
    xs = rng.random((3, 32, 32))
    cts = rng.normal(size=(3, 10))
    grads, dx = nn.backward(p, xs, cts)
    singles = [nn.backward(p, xs[i], cts[i]) for i in range(3)]
    for name in nn.PARAM_NAMES:
        assert np.allclose(grads[name], sum(s[0][name] for s in singles), atol=1e-10)
    for i in range(3):
        assert np.allclose(dx[i], singles[i][1], atol=1e-12)


def test_cross_entropy_examples():
    loss, g = nn.cross_entropy_loss(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert g[3] == pytest.approx(0.1 - 1)
    logits = np.zeros(10)
    logits[4] = 1000.0
    loss, _ = nn.cross_entropy_loss(logits, 4)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(5):
        z = rng.normal(size=10) * 3
        t = int(rng.integers(10))
        _, g = nn.cross_entropy_loss(z, t)
        for k in range(10):
            e = np.zeros(10)
            e[k] = 1.0
            fd = central_difference(lambda v: nn.cross_entropy_loss(v, t)[0], z, e, h=1e-5)
            assert abs(fd - g[k]) < 1e-6


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        nn.cross_entropy_loss(np.zeros(10), 10)
    with pytest.raises(ValueError):
        nn.cross_entropy_loss(np.zeros(10), -1)


@pytest.fixture(scope="module")
def toy():
    return generate_synthetic(200, 11, "train")


def test_train_zero_lr_keeps_init(toy):
    cfg = nn.TrainConfig(epochs=1, learning_rate=0.0, seed=4)
    p = nn.train(cfg, toy.images[:40], toy.labels[:40])
    init = nn.init_params(4)
    for name in nn.PARAM_NAMES:
        assert np.array_equal(p.arrays[name], init.arrays[name])


def test_train_fits_toy_set_and_is_deterministic(toy):
    cfg = nn.TrainConfig(epochs=20, seed=5, batch_size=16)
    p1 = nn.train(cfg, toy.images, toy.labels)
    assert nn.accuracy(p1, toy.images, toy.labels) >= 0.9
    p2 = nn.train(cfg, toy.images, toy.labels)
    for name in nn.PARAM_NAMES:
        assert np.array_equal(p1.arrays[name], p2.arrays[name])


def test_train_lineage_and_errors(toy):
    cfg = nn.TrainConfig(epochs=1, seed=1)
    base = nn.train(cfg, toy.images[:20], toy.labels[:20])
    assert base.lineage == "base" and base.train_quality is None
    orig = nn.train(nn.TrainConfig(epochs=1, seed=2, jpeg_quality=40), toy.images[:20], toy.labels[:20])
    assert orig.lineage == "originative" and orig.train_quality == 40
    der = nn.train(nn.derivative_config(cfg, 60), toy.images[:20], toy.labels[:20], init=base)
    assert der.lineage == "derivative" and der.train_quality == 60
    with pytest.raises(ValueError):
        nn.train(cfg, toy.images[:0], toy.labels[:0])
    with pytest.raises(ValueError):
        nn.train(nn.derivative_config(cfg, 60), toy.images[:20], toy.labels[:20])


def test_derivative_step_is_five_times_smaller():
    cfg = nn.TrainConfig(learning_rate=0.05)
    assert nn.derivative_config(cfg, 20).learning_rate == pytest.approx(0.01)


def test_cosine_self_and_scale_invariance():
    a = random_params(30)
    assert nn.weight_cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)
    b = a.copy()
    for name, k in zip(nn.WEIGHT_NAMES, (0.5, 3.0, 11.0)):
        b.arrays[name] = b.arrays[name] * k
    assert nn.weight_cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)
    c = random_params(31)
    assert nn.weight_cosine_similarity(a, c) == nn.weight_cosine_similarity(c, a)


def test_cosine_of_independent_inits_is_small():
    # Monte Carlo over 10 seed pairs
    sims = [nn.weight_cosine_similarity(nn.init_params(2 * i), nn.init_params(2 * i + 1)) for i in range(10)]
    assert max(abs(s) for s in sims) < 0.2


def test_cosine_errors():
    a = nn.init_params(0)
    with pytest.raises(ValueError):
        nn.weight_cosine_similarity(a, nn.zero_params())
    other = nn.init_params(0, nn.ModelSpec(conv1_filters=4))
    with pytest.raises(ShapeError):
        nn.weight_cosine_similarity(a, other)


def test_checkpoint_round_trip(tmp_path):
    p = random_params(40)
    p.lineage, p.train_quality, p.seed = "derivative", 60, 40
    path = tmp_path / "m.bin"
    nn.save_checkpoint(p, path)
    raw = path.read_bytes()
    assert raw[:8] == b"SHLDMDL1"
    hlen = int.from_bytes(raw[8:12], "little")
    n_values = sum(int(np.prod(s)) for s in p.spec.param_shapes().values())
    assert len(raw) == 12 + hlen + 8 * n_values
    q = nn.load_checkpoint(path)
    assert (q.lineage, q.train_quality, q.seed, q.spec) == ("derivative", 60, 40, p.spec)
    for name in nn.PARAM_NAMES:
        assert np.array_equal(q.arrays[name], p.arrays[name])
    # first parameter array starts right after the header, little-endian float64
    first = np.frombuffer(raw[12 + hlen : 12 + hlen + 8], dtype="<f8")[0]
    assert first == p.arrays["conv1_w"].ravel()[0]


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTAMODEL")
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(path)
