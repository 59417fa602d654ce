import numpy as np
import pytest

from vinehsi.autodiff import RMSprop, Tensor, load_checkpoint, no_grad, ops, rmsprop_step, save_checkpoint
from vinehsi.autodiff.checkpoint import CheckpointError
from vinehsi.autodiff.reference import conv2d_naive, gradient_errors, max_pool_naive


def test_identity_1x1_conv(rng):
    x = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    kernel = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    assert np.array_equal(ops.conv2d(x, kernel, None, 1, "same").data, x)


def test_same_padding_stride_two():
    x = np.zeros((1, 23, 23, 2), np.float32)
    assert ops.conv2d(x, np.zeros((3, 3, 2, 4), np.float32), None, 2, "same").shape == (1, 12, 12, 4)
    assert ops.same_padding(23, 3, 2) == (1, 1)
    # even total: the extra pixel goes bottom/right
    assert ops.same_padding(12, 3, 2) == (0, 1)


@pytest.mark.parametrize("stride,padding", [(1, "valid"), (1, "same"), (2, "same"), (2, "valid")])
def test_conv_matches_direct_sum(rng, stride, padding):
    x = rng.normal(size=(2, 5, 5, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    fast = ops.conv2d(x, k, b, stride, padding).data
    assert np.max(np.abs(fast - conv2d_naive(x, k, b, stride, padding))) <= 1e-6


def test_max_pool_matches_and_routes(rng):
    x = rng.normal(size=(2, 7, 7, 3))
    assert np.array_equal(ops.max_pool2d(x, 3, 2, "same").data, max_pool_naive(x, 3, 2, "same"))
    t = Tensor(x.copy(), requires_grad=True)
    ops.total(ops.max_pool2d(t, 3, 2, "same")).backward()
    # every output cell sends exactly one unit of gradient to one input
    assert t.grad.sum() == pytest.approx(2 * 4 * 4 * 3)
    assert set(np.unique(t.grad)) <= {0.0, 1.0, 2.0, 3.0, 4.0}


def test_leaky_relu_examples():
    x = np.array([-1.0, 2.0, 0.5, -3.0])
    assert ops.leaky_relu(x, 0.1).data.tolist() == pytest.approx([-0.1, 2.0, 0.5, -0.3])
    assert np.array_equal(ops.leaky_relu(x, 1.0).data, x)


def test_batch_norm_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10_000, 1, 1, 2))
    rm, rv = np.zeros(2), np.ones(2)
    out = ops.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, True).data
    assert np.allclose(out.mean(axis=(0, 1, 2)), 0, atol=0.05)
    assert np.allclose(out.var(axis=(0, 1, 2)), 1, atol=0.05)
    out = ops.batch_norm(x, 2 * np.ones(2), 3 * np.ones(2), rm, rv, True).data
    assert np.allclose(out.mean(axis=(0, 1, 2)), 3, atol=0.05)
    a = ops.batch_norm(x[:5], np.ones(2), np.zeros(2), rm, rv, False).data
    b = ops.batch_norm(x[:5], np.ones(2), np.zeros(2), rm, rv, False).data
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        ops.batch_norm(x[:1], np.ones(2), np.zeros(2), rm, rv, True)


def test_batch_norm_running_stats():
    x = np.full((4, 1, 1, 1), 5.0)
    x[0] = 1.0
    rm, rv = np.zeros(1), np.ones(1)
    ops.batch_norm(x, np.ones(1), np.zeros(1), rm, rv, True, momentum=0.99)
    assert rm[0] == pytest.approx(0.01 * 4.0)
    assert rv[0] == pytest.approx(0.99 + 0.01 * 3.0)


def test_dropout_examples():
    x = np.random.default_rng(0).normal(size=(50,))
    rng = np.random.default_rng(1)
    assert np.array_equal(ops.dropout(x, 0.0, True, rng).data, x)
    assert np.array_equal(ops.dropout(x, 0.7, False, rng).data, x)
    ones = np.ones(10_000)
    assert ops.dropout(ones, 0.4, True, rng).data.mean() == pytest.approx(1.0, rel=0.02)


def test_softmax_cross_entropy_examples():
    assert float(ops.softmax_cross_entropy(np.zeros((3, 17)), [0, 5, 16]).data) == pytest.approx(np.log(17))
    logits = np.zeros((1, 4))
    logits[0, 2] = 60.0
    assert float(ops.softmax_cross_entropy(logits, [2]).data) < 1e-20
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 5, 4)
    err = gradient_errors(lambda z: ops.softmax_cross_entropy(z, labels), {"z": rng.normal(size=(4, 5))})
    assert err["z"] <= 1e-6


def test_softmax_rows_sum_to_one(rng):
    p = ops.softmax(rng.normal(size=(6, 9)) * 10, axis=1).data
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12


def test_rmsprop_examples():
    theta = np.array([1.0, -2.0])
    v = np.zeros(2)
    rmsprop_step([theta], [np.zeros(2)], [v], lr=0.01)
    assert theta.tolist() == [1.0, -2.0]
    theta = np.array([0.0])
    rmsprop_step([theta], [np.ones(1)], [np.zeros(1)], lr=0.01, rho=0.9, eps=0.0)
    assert theta[0] == pytest.approx(-0.01 / np.sqrt(0.1), abs=1e-9)
    assert theta[0] == pytest.approx(-0.031623, abs=1e-6)
    theta, v = np.array([0.0]), np.zeros(1)
    trail = []
    for _ in range(2):
        rmsprop_step([theta], [np.ones(1)], [v], lr=0.01)
        trail.append(theta[0])
    assert 0 > trail[0] > trail[1]


def test_linear_layer_gradient():
    rng = np.random.default_rng(1)
    err = gradient_errors(lambda x, w, b: ops.dense(x, w, b),
                          {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 2)), "b": rng.normal(size=2)})
    assert max(err.values()) <= 1e-6


def test_disconnected_parameter_and_path_sum():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = Tensor(np.array([3.0]), requires_grad=True)
    ops.total(ops.add(ops.mul(a, 3.0), ops.mul(a, a))).backward()
    assert np.allclose(a.grad, 3.0 + 2 * np.array([1.0, 2.0]))
    assert unused.grad is None


def test_backward_releases_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    out = ops.total(ops.mul(a, a))
    out.backward()
    with pytest.raises(RuntimeError):
        out.backward()


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = ops.total(ops.mul(a, a))
    assert not out.requires_grad and out.is_leaf


def test_concat_doubles_channels():
    x = np.random.default_rng(0).normal(size=(2, 3, 3, 40))
    both = ops.concat([x, x], axis=-1).data
    assert both.shape[-1] == 80 and np.array_equal(both[..., :40], both[..., 40:])


def test_optimizer_determinism():
    def run():
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(4, 3)).astype(np.float32), requires_grad=True, name="w")
        b = Tensor(np.zeros(3, np.float32), requires_grad=True, name="b")
        opt = RMSprop([w, b], lr=1e-2)
        x = rng.normal(size=(8, 4)).astype(np.float32)
        y = rng.integers(0, 3, 8)
        for _ in range(5):
            opt.zero_grad()
            ops.softmax_cross_entropy(ops.dense(x, w, b), y).backward()
            opt.step()
        return w.data.tobytes() + b.data.tobytes()
    assert run() == run()


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a/kernel": rng.normal(size=(3, 3, 2, 4)).astype(np.float32), "a/bias": np.zeros(4, np.float32),
               "s": np.array(2.5, np.float32)}
    save_checkpoint(tmp_path / "m.vhsc", tensors, {"a/kernel": np.ones((3, 3, 2, 4), np.float32)})
    back, optim = load_checkpoint(tmp_path / "m.vhsc")
    assert set(back) == set(tensors) and list(optim) == ["a/kernel"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k]) and back[k].shape == tensors[k].shape


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "m.vhsc", {"x": np.ones(10, np.float32)})
    raw = (tmp_path / "m.vhsc").read_bytes()
    (tmp_path / "cut.vhsc").write_bytes(raw[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.vhsc")
    (tmp_path / "bad.vhsc").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.vhsc")
