import numpy as np
import pytest

from mfaug.tensor import (
    SGD,
    BatchNorm,
    ConfigurationError,
    DimensionError,
    GradTape,
    OptimizerState,
    Parameter,
    Tensor,
    cat,
    check_gradients,
    cosine_lr,
    train_step,
)
from mfaug.tensor import functional as F
from mfaug.tensor.functional import smoothed_targets


def brute_conv(x, w, stride, pad, groups):
    n, c, h, wd = x.shape
    co, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    opg = co // groups
    for b in range(n):
        for o in range(co):
            g = o // opg
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, g * cg:(g + 1) * cg, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, o, i, j] = (patch * w[o]).sum()
    return out


def test_conv_scalar():
    y = F.conv2d(Tensor([[[[2.0]]]]), Tensor([[[[3.0]]]]))
    assert y.data.reshape(-1).tolist() == [6.0]


def test_conv_hand_correlation():
    x = Tensor(np.array([1, 2, 3, 4.0]).reshape(1, 1, 2, 2))
    w = Tensor(np.array([1, 0, 0, 1.0]).reshape(1, 1, 2, 2))
    assert F.conv2d(x, w).data.reshape(-1).tolist() == [5.0]


def test_conv_zero_weight():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 5)))
    y = F.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), padding=1)
    assert np.all(y.data == 0)


@pytest.mark.parametrize("stride,pad,groups,cin,cout", [(1, 1, 1, 3, 4), (2, 1, 1, 2, 3), (1, 0, 2, 4, 6), (2, 1, 4, 4, 4)])
def test_conv_matches_brute_force(stride, pad, groups, cin, cout):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, cin, 6, 5))
    w = rng.normal(size=(cout, cin // groups, 3, 3))
    y = F.conv2d(Tensor(x), Tensor(w), stride, pad, groups)
    np.testing.assert_allclose(y.data, brute_conv(x, w, stride, pad, groups), rtol=1e-10, atol=1e-10)


def test_depthwise_equals_per_channel_correlation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 5, 7, 7))
    w = rng.normal(size=(5, 1, 3, 3))
    y = F.conv2d(Tensor(x), Tensor(w), 1, 1, groups=5).data
    for c in range(5):
        ref = brute_conv(x[:, c:c + 1], w[c:c + 1], 1, 1, 1)
        np.testing.assert_allclose(y[:, c:c + 1], ref, atol=1e-10)


def test_conv_errors():
    with pytest.raises(DimensionError):
        F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))
    with pytest.raises(ConfigurationError):
        F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))), groups=2)


def test_linear_examples():
    assert F.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0]])).data.tolist() == [[3.0]]
    y = F.linear(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor([5.0, 5.0]))
    assert y.data.tolist() == [[6.0, 5.0]]
    y = F.linear(Tensor([[0.5, -0.5]]), Tensor([[2.0, 2.0], [4.0, 0.0]]))
    assert y.data.tolist() == [[0.0, 2.0]]
    with pytest.raises(DimensionError):
        F.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0, 1.0]]))


@pytest.mark.parametrize("seed", range(6))
def test_conv_gradcheck(seed):
    rng = np.random.default_rng(seed)
    cin = int(rng.integers(1, 5))
    groups = cin if seed % 2 else 1
    cout = cin if groups > 1 else int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(2, cin, 4, 4))
    w = rng.normal(size=(cout, cin // groups, k, k))
    errs = check_gradients(lambda a, b: F.conv2d(a, b, stride, k // 2, groups), [x, w])
    assert max(errs) < 1e-3


def test_elementwise_gradchecks():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4)) * 3
    assert check_gradients(F.hard_swish, [x])[0] < 1e-3
    assert check_gradients(F.relu, [x + 0.01])[0] < 1e-3
    x4 = rng.normal(size=(2, 3, 4, 4))
    assert check_gradients(F.global_avg_pool, [x4])[0] < 1e-3
    labels = np.array([0, 2, 1])
    errs = check_gradients(lambda z: F.cross_entropy_label_smoothed(z, labels), [x])
    assert errs[0] < 1e-3


def test_batch_norm_gradcheck():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 2, 3, 3))
    g = rng.normal(size=2)
    b = rng.normal(size=2)

    def fn(xx, gg, bb):
        return F.batch_norm(xx, gg, bb, np.zeros(2), np.ones(2), training=True)

    assert max(check_gradients(fn, [x, g, b])) < 1e-3


def test_batch_norm_running_stats():
    bn = BatchNorm(2)
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(64, 2, 4, 4)).astype(np.float32))
    for _ in range(100):
        bn(x)
    np.testing.assert_allclose(bn.running_mean, x.data.mean(axis=(0, 2, 3)), atol=1e-3)
    bn.eval()
    y = bn(x)
    assert abs(float(y.data.mean())) < 0.05


def test_linear_gradcheck():
    rng = np.random.default_rng(5)
    errs = check_gradients(F.linear, [rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)])
    assert max(errs) < 1e-3


def test_cat_and_index_gradients():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 3, 3))
    assert max(check_gradients(lambda p, q: cat([p, q], axis=1), [a, b])) < 1e-3
    assert check_gradients(lambda p: p[:, 1:], [b])[0] < 1e-3


def test_tape_visits_each_node_once():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    z = (y + y * x).sum()
    tape = z.backward()
    ids = [id(n) for n in tape.nodes]
    assert len(ids) == len(set(ids))
    np.testing.assert_allclose(x.grad, 2.0 + 4.0 * x.data)
    assert isinstance(tape, GradTape)


def test_vanilla_sgd_step():
    w = Parameter([1.0])
    w.grad = np.array([1.0], dtype=np.float32)
    SGD([w], lr=0.1, momentum=0.0, weight_decay=0.0).step()
    np.testing.assert_allclose(w.data, [0.9], rtol=1e-6)


def test_label_smoothing_targets():
    np.testing.assert_allclose(smoothed_targets([0], 4, 0.1)[0], [0.925, 0.025, 0.025, 0.025])


def test_cosine_schedule():
    assert cosine_lr(50, 100, 0.05) == pytest.approx(0.025)
    assert abs(cosine_lr(100, 100, 0.05)) < 1e-9
    assert cosine_lr(0, 100, 0.05) == pytest.approx(0.05)


def test_momentum_buffer_shapes():
    w = Parameter(np.ones((2, 3)))
    opt = SGD([w], lr=0.1)
    w.grad = np.ones((2, 3), dtype=np.float32)
    opt.step()
    assert opt.state.buffers[0].shape == w.shape


def test_train_step_reduces_convex_loss():
    # logits = x*w on a single sample; CE is convex in w
    w = Parameter(np.zeros((3, 2)))

    class Model:
        def __call__(self, x):
            return F.linear(x, w)

    x = np.array([[1.0, -1.0]], dtype=np.float32)
    opt = SGD([w], OptimizerState(lr=0.1, momentum=0.0, weight_decay=0.0))
    first = train_step(Model(), (x, np.array([1])), opt)
    second = train_step(Model(), (x, np.array([1])), opt)
    assert second < first
