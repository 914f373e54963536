import numpy as np
import pytest
from _gradcheck import LAYER_CASES, check_network, layer_errors, max_rel_error, numeric_grad

from siamalign import nn
from siamalign.nn import functional as F

SEEDS = range(10)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("case", sorted(LAYER_CASES))
def test_layer_gradients(case, seed):
    errors = layer_errors(case, seed)
    assert max(errors.values()) < 1e-4, errors


@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_eval_gradients(seed):
    errors = check_network([nn.batchnorm()], (3, 4, 2), seed, train=False)
    assert max(errors.values()) < 1e-4, errors


@pytest.mark.parametrize("seed", range(3))
def test_small_tower_gradients(seed):
    specs = [nn.conv(3, 3), nn.relu(), nn.batchnorm(), nn.maxpool(), nn.conv(4, 3), nn.relu(), nn.flatten(), nn.dense(3)]
    errors = check_network(specs, (6, 6, 1), seed)
    assert max(errors.values()) < 1e-4, errors


def test_conv_against_direct_loops(rng):
    x = rng.normal(size=(2, 5, 4, 3))
    k = rng.normal(size=(3, 2, 3, 4))
    b = rng.normal(size=4)
    out, _ = F.conv2d_forward(x, k, b, padding="same")
    # same padding: top/left pad (k-1)//2
    xp = np.pad(x, ((0, 0), (1, 1), (0, 1), (0, 0)))
    ref = np.zeros((2, 5, 4, 4))
    for n in range(2):
        for i in range(5):
            for j in range(4):
                ref[n, i, j] = np.tensordot(xp[n, i : i + 3, j : j + 2], k, axes=3) + b
    assert np.allclose(out, ref)


def test_maxpool_values():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    out, _ = F.maxpool_forward(x)
    assert out[0, :, :, 0].tolist() == [[5, 7], [13, 15]]


def test_dense_gradient_is_outer_product(rng):
    x = rng.normal(size=(1, 4))
    w = rng.normal(size=(3, 4))
    dout = rng.normal(size=(1, 3))
    _, cache = F.dense_forward(x, w, np.zeros(3))
    dx, dw, db = F.dense_backward(dout, cache)
    assert np.allclose(dw, np.outer(dout[0], x[0]))
    assert np.allclose(db, dout[0]) and np.allclose(dx, dout @ w)


def test_batchnorm_statistics(rng):
    x = rng.normal(3.0, 2.0, size=(64, 2, 2, 3))
    rm, rv = np.zeros(3), np.ones(3)
    out, _ = F.batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv, mode="train")
    assert np.allclose(out.reshape(-1, 3).mean(axis=0), 0, atol=1e-12)
    assert np.allclose(out.reshape(-1, 3).var(axis=0), 1, atol=1e-3)
    assert np.allclose(rm, 0.1 * x.reshape(-1, 3).mean(axis=0))


def test_sgd_momentum_recurrence():
    p = {"w": np.array([1.0])}
    v = {}
    grads = [np.array([0.5]), np.array([-1.0]), np.array([2.0])]
    ref_p, ref_v = 1.0, 0.0
    for g in grads:
        nn.sgd_step(p, {"w": g}, v, lr=0.1, momentum=0.9)
        ref_v = 0.9 * ref_v + g[0]
        ref_p -= 0.1 * ref_v
        assert p["w"][0] == pytest.approx(ref_p, abs=1e-15)
    with pytest.raises(ValueError):
        nn.sgd_step(p, {"w": np.zeros(2)}, v, lr=0.1)


def test_backward_requires_forward():
    net = nn.Sequential([nn.relu()], (2, 2, 1))
    with pytest.raises(RuntimeError):
        net.backward(np.zeros((1, 2, 2, 1)))


def test_shape_errors():
    net = nn.Sequential([nn.flatten(), nn.dense(2)], (2, 2, 1))
    with pytest.raises(nn.ShapeError):
        net.forward(np.zeros((1, 3, 2, 1)))
    with pytest.raises(ValueError):
        nn.Sequential([nn.maxpool(2, 1)], (4, 4, 1))


def test_infer_shapes():
    shapes = nn.infer_shapes([nn.conv(4, 3), nn.maxpool(), nn.flatten(), nn.dense(7)], (8, 6, 1))
    assert shapes == [(8, 6, 4), (4, 3, 4), (48,), (7,)]


def test_fingerprint_depends_on_architecture_and_meta():
    a = nn.Sequential([nn.conv(2, 3)], (4, 4, 1), seed=0)
    b = nn.Sequential([nn.conv(2, 3)], (4, 4, 1), seed=1)
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != nn.Sequential([nn.conv(3, 3)], (4, 4, 1)).fingerprint
    assert a.fingerprint != nn.Sequential([nn.conv(2, 3)], (4, 4, 1), meta={"feature_kind": "stft"}).fingerprint


def _net(seed=0):
    return nn.Sequential([nn.conv(3, 3), nn.relu(), nn.batchnorm(), nn.flatten(), nn.dense(4)], (4, 4, 1), seed=seed, meta={"k": "v"})


def test_checkpoint_round_trip(tmp_path, rng):
    net = _net()
    net.forward(rng.normal(size=(8, 4, 4, 1)).astype(np.float32), train=True)
    nn.save_checkpoint(net, tmp_path / "m.ckpt", extra={"note": 1})
    back = nn.load_checkpoint(tmp_path / "m.ckpt", expected=net.fingerprint)
    assert back.fingerprint == net.fingerprint and back.checkpoint_extra == {"note": 1}
    for s1, s2 in zip(net.state(), back.state()):
        assert s1.keys() == s2.keys()
        for k in s1:
            assert np.array_equal(s1[k], s2[k])
    x = rng.normal(size=(2, 4, 4, 1))
    assert np.array_equal(net.predict(x), back.predict(x))


def test_checkpoint_errors(tmp_path):
    net = _net()
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(net, path)
    other = nn.Sequential([nn.flatten(), nn.dense(2)], (4, 4, 1))
    with pytest.raises(nn.FingerprintMismatchError):
        nn.load_checkpoint(path, expected=other.fingerprint)
    data = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[: len(data) // 2])
    with pytest.raises(nn.CheckpointCorruptError):
        nn.load_checkpoint(tmp_path / "t.ckpt")
    flipped = bytearray(data)
    flipped[-10] ^= 0xFF
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(nn.CheckpointCorruptError):
        nn.load_checkpoint(tmp_path / "f.ckpt")
    bad_version = bytearray(data)
    bad_version[8:10] = (99).to_bytes(2, "little")
    (tmp_path / "v.ckpt").write_bytes(bytes(bad_version))
    with pytest.raises(nn.CheckpointVersionError):
        nn.load_checkpoint(tmp_path / "v.ckpt")


def test_numeric_helper_on_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    g = numeric_grad(lambda: float(np.sum(x**2)), x)
    assert max_rel_error(g, 2 * x) < 1e-8
