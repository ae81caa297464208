import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvrm import autodiff as ad
from dvrm.autodiff import Parameter, ShapeError, Tape, Tensor, finite_diff_check


def _param(rng, *shape):
    return Parameter(rng.normal(size=shape), name="p")


def naive_conv(x, w, b, stride, pads):
    """Loop-based cross-correlation oracle."""
    (pt, pb), (pl, pr) = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    n, c, h, wd = xp.shape
    f, _, k, _ = w.shape
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,fckl->nf", patch, w) + b
    return out


def naive_deconv(x, w, b, stride):
    """Scatter definition of the transposed convolution ('valid', full output)."""
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    out = np.zeros((n, f, (h - 1) * stride + k, (wd - 1) * stride + k))
    for i in range(h):
        for j in range(wd):
            out[:, :, i * stride : i * stride + k, j * stride : j * stride + k] += np.einsum(
                "nc,cfkl->nfkl", x[:, :, i, j], w
            )
    return out + b[None, :, None, None]


class TestTensorBasics:
    def test_int_data_becomes_float(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float64
        assert t.data.size == np.prod(t.shape)

    def test_sum_grad_is_ones(self):
        p = Parameter(np.array([1.0, -2.0, 3.0]))
        with Tape() as tape:
            loss = ad.sum(p)
        ad.backward(loss, tape)
        np.testing.assert_array_equal(p.grad, [1, 1, 1])

    def test_square_grad(self):
        p = Parameter(np.array([1.0, 2.0]))
        with Tape() as tape:
            loss = ad.sum(p * p)
        ad.backward(loss, tape)
        np.testing.assert_array_equal(p.grad, [2.0, 4.0])

    def test_grad_shape_matches(self):
        p = Parameter(np.zeros((3, 4)))
        assert p.grad.shape == p.shape

    def test_non_scalar_loss_rejected(self):
        p = Parameter(np.ones(3))
        with Tape() as tape:
            out = p * 2.0
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(out, tape)

    def test_tape_replayed_once(self):
        p = Parameter(np.ones(2))
        with Tape() as tape:
            loss = ad.sum(p)
        ad.backward(loss, tape)
        with pytest.raises(RuntimeError):
            ad.backward(loss, tape)

    def test_backward_accumulates_until_zero_grad(self):
        p = Parameter(np.array([1.0, 2.0]))
        for _ in range(2):
            with Tape() as tape:
                loss = ad.sum(p * p)
            ad.backward(loss, tape)
        np.testing.assert_array_equal(p.grad, [4.0, 8.0])
        p.zero_grad()
        assert not p.grad.any()

    def test_reused_parameter_gets_single_total(self):
        p = Parameter(np.array([3.0]))
        with Tape() as tape:
            loss = ad.sum(p * p + p * 2.0 + p)
        ad.backward(loss, tape)
        np.testing.assert_allclose(p.grad, [2 * 3.0 + 3.0])

    def test_no_tape_records_nothing(self):
        p = Parameter(np.ones(2))
        out = p * 3.0
        np.testing.assert_array_equal(out.data, [3, 3])

    def test_grad_does_not_touch_parameter(self):
        p = Parameter(np.array([1.0, 2.0]))
        with Tape() as tape:
            loss = ad.sum(ad.exp(p))
        (g,) = ad.grad(loss, tape, [p])
        np.testing.assert_allclose(g, np.exp([1.0, 2.0]))
        assert not p.grad.any()

    def test_broadcast_add_reduces_gradient(self):
        a = Parameter(np.ones((2, 3)))
        b = Parameter(np.ones(3))
        with Tape() as tape:
            loss = ad.sum(a + b)
        ad.backward(loss, tape)
        np.testing.assert_array_equal(b.grad, [2, 2, 2])


class TestElementwiseGradients:
    @pytest.mark.parametrize(
        "fn",
        [
            lambda p: ad.sum(ad.exp(p) * p),
            lambda p: ad.sum(ad.log(p * p + 1.0)),
            lambda p: ad.sum(p / (p * p + 2.0)),
            lambda p: ad.mean(ad.activation(p, "tanh")),
            lambda p: ad.sum(ad.activation(p, "sigmoid") * p),
            lambda p: ad.sum(ad.clamp(p, -0.5, 0.5) * p),
            lambda p: ad.sum(ad.reshape(p, (6,))[1:4] * 3.0),
            lambda p: ad.sum(ad.sum(p, axis=1) ** 2),
        ],
        ids=["exp", "log", "div", "tanh", "sigmoid", "clamp", "slice", "axis_sum"],
    )
    def test_matches_finite_differences(self, fn):
        rng = np.random.default_rng(1)
        p = _param(rng, 2, 3)
        p.data += np.sign(p.data) * 0.05  # keep clamp kinks away from the probe
        assert finite_diff_check(lambda: fn(p), p) <= 1e-6

    def test_relu_values_and_subgradient(self):
        p = Parameter(np.array([-1.0, 0.0, 2.0]))
        with Tape() as tape:
            out = ad.activation(p, "relu")
            loss = ad.sum(out)
        np.testing.assert_array_equal(out.data, [0, 0, 2])
        ad.backward(loss, tape)
        np.testing.assert_array_equal(p.grad, [0, 0, 1])

    def test_sigmoid_zero(self):
        assert ad.activation(Tensor([0.0]), "sigmoid").item() == 0.5

    def test_leaky_relu_fd_away_from_zero(self):
        rng = np.random.default_rng(2)
        p = Parameter(rng.uniform(0.1, 1.0, 20) * rng.choice([-1, 1], 20))
        err = finite_diff_check(lambda: ad.sum(ad.activation(p, "leaky_relu", 0.2) ** 2), p)
        assert err <= 1e-6

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            ad.activation(Tensor([1.0]), "swish")


class TestDense:
    def test_identity(self):
        out = ad.dense(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_hand_arithmetic(self):
        out = ad.dense(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
        np.testing.assert_array_equal(out.data, [[6]])

    def test_weight_gradient(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(4, 5)))
        w = _param(rng, 5, 3)
        b = _param(rng, 3)
        f = lambda: ad.sum(ad.activation(ad.dense(x, w, b), "tanh"))
        assert finite_diff_check(f, w) <= 1e-4
        assert finite_diff_check(f, b) <= 1e-4

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ad.dense(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


class TestConcat:
    def test_values(self):
        out = ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0)
        np.testing.assert_array_equal(out.data, [1, 2, 3])

    @pytest.mark.parametrize("axis", [0, 1, 2, 3])
    def test_seam_round_trip(self, axis):
        rng = np.random.default_rng(axis)
        a = rng.normal(size=(2, 3, 4, 5))
        shape_b = list(a.shape)
        shape_b[axis] = 2
        b = rng.normal(size=shape_b)
        out = ad.concat([Tensor(a), Tensor(b)], axis=axis).data
        np.testing.assert_array_equal(np.take(out, range(a.shape[axis]), axis=axis), a)
        np.testing.assert_array_equal(np.take(out, range(a.shape[axis], out.shape[axis]), axis=axis), b)

    def test_gradient_routing(self):
        rng = np.random.default_rng(4)
        a, b = _param(rng, 2, 3), _param(rng, 2, 2)
        weights = Tensor(rng.normal(size=(2, 5)))
        f = lambda: ad.sum(ad.concat([a, b], axis=1) * weights)
        with Tape() as tape:
            loss = f()
        ga, gb = ad.grad(loss, tape, [a, b])
        np.testing.assert_array_equal(ga, weights.data[:, :3])
        np.testing.assert_array_equal(gb, weights.data[:, 3:])
        assert finite_diff_check(f, a) <= 1e-6

    def test_incompatible_shapes_name_axis(self):
        with pytest.raises(ShapeError, match="axis 0"):
            ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


class TestConv:
    def test_same_padding_hand_example(self):
        out = ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
        np.testing.assert_array_equal(out.data[0, 0], [[4, 2], [2, 1]])

    def test_identity_kernel(self):
        x = np.random.default_rng(5).normal(size=(2, 3, 5, 4))
        w = np.eye(3)[:, :, None, None]
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("k,stride,size", [(2, 1, 7), (3, 1, 6), (2, 2, 7), (4, 4, 28), (3, 2, 8), (1, 1, 3)])
    def test_matches_loop_oracle(self, k, stride, size):
        rng = np.random.default_rng(k * 10 + stride)
        x = rng.normal(size=(2, 3, size, size))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
        pads = (ad._same_pads(size, k, stride),) * 2
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pads), rtol=1e-12, atol=1e-12)
        assert out.shape[2] == -(-size // stride)

    def test_valid_padding(self):
        rng = np.random.default_rng(6)
        x, w = rng.normal(size=(1, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), padding="valid").data
        np.testing.assert_allclose(out, naive_conv(x, w, np.zeros(3), 1, ((0, 0), (0, 0))), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients(self, stride):
        rng = np.random.default_rng(7 + stride)
        x = _param(rng, 2, 2, 5, 5)
        w = _param(rng, 3, 2, 2, 2)
        b = _param(rng, 3)
        f = lambda: ad.sum(ad.conv2d(x, w, b, stride=stride) ** 2)
        for p in (x, w, b):
            assert finite_diff_check(f, p) <= 1e-4

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(ShapeError, match="axis 1"):
            ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))), Tensor([0.0]))


class TestDeconv:
    def test_single_pixel(self):
        out = ad.deconv2d(Tensor(np.full((1, 1, 1, 1), 2.5)), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
        np.testing.assert_array_equal(out.data[0, 0], np.full((2, 2), 2.5))

    def test_identity_kernel(self):
        x = np.random.default_rng(8).normal(size=(2, 3, 4, 4))
        out = ad.deconv2d(Tensor(x), Tensor(np.eye(3)[:, :, None, None]), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("k,stride", [(2, 1), (2, 2), (3, 2), (3, 1), (4, 2)])
    def test_matches_scatter_oracle(self, k, stride):
        rng = np.random.default_rng(k + 3 * stride)
        x, w, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(3, 2, k, k)), rng.normal(size=2)
        out = ad.deconv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
        np.testing.assert_allclose(out, naive_deconv(x, w, b, stride), atol=1e-12)

    @pytest.mark.parametrize("stride,size", [(1, 7), (2, 8), (2, 14)])
    def test_same_restores_spatial_size(self, stride, size):
        x = Tensor(np.ones((1, 2, size, size)))
        w = Tensor(np.ones((3, 2, 2, 2)))
        down = ad.conv2d(x, w, Tensor(np.zeros(3)), stride=stride)
        up = ad.deconv2d(down, w, Tensor(np.zeros(2)), stride=stride, padding="same")
        assert up.shape == x.shape

    @pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (2, "valid")])
    def test_gradients(self, stride, padding):
        rng = np.random.default_rng(9 + stride)
        x = _param(rng, 2, 2, 3, 3)
        w = _param(rng, 2, 3, 2, 2)
        b = _param(rng, 3)
        f = lambda: ad.sum(ad.activation(ad.deconv2d(x, w, b, stride=stride, padding=padding), "tanh"))
        for p in (x, w, b):
            assert finite_diff_check(f, p) <= 1e-4


@st.composite
def conv_configs(draw):
    k = draw(st.integers(1, 4))
    stride = draw(st.integers(1, 3))
    h = draw(st.integers(k, 9))
    wd = draw(st.integers(k, 9))
    return dict(
        n=draw(st.integers(1, 3)), c=draw(st.integers(1, 3)), f=draw(st.integers(1, 3)),
        h=h, w=wd, k=k, stride=stride, seed=draw(st.integers(0, 2**16)),
    )


@settings(max_examples=60, deadline=None)
@given(conv_configs())
def test_conv_deconv_adjoint_valid(cfg):
    rng = np.random.default_rng(cfg["seed"])
    x = rng.normal(size=(cfg["n"], cfg["c"], cfg["h"], cfg["w"]))
    w = rng.normal(size=(cfg["f"], cfg["c"], cfg["k"], cfg["k"]))
    y_conv = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(cfg["f"])), stride=cfg["stride"], padding="valid")
    y = rng.normal(size=y_conv.shape)
    back = ad.deconv2d(Tensor(y), Tensor(w), Tensor(np.zeros(cfg["c"])), stride=cfg["stride"]).data
    # the transposed conv covers the input region the valid conv actually read
    lhs = float(np.sum(y_conv.data * y))
    rhs = float(np.sum(x[:, :, : back.shape[2], : back.shape[3]] * back))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_forward_backward_bit_identical():
    rng = np.random.default_rng(11)
    x0, w0 = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 2, 2))

    def run():
        w = Parameter(w0.copy())
        with Tape() as tape:
            loss = ad.sum(ad.activation(ad.conv2d(Tensor(x0), w, Tensor(np.zeros(4))), "leaky_relu") ** 2)
        ad.backward(loss, tape)
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


class TestFiniteDiffCheck:
    def test_sum(self):
        p = _param(np.random.default_rng(0), 5)
        assert finite_diff_check(lambda: ad.sum(p), p) <= 1e-10

    def test_sigmoid(self):
        p = _param(np.random.default_rng(1), 6)
        assert finite_diff_check(lambda: ad.sum(ad.activation(p, "sigmoid")), p, eps=1e-5) <= 1e-6

    def test_catches_corrupted_gradient(self):
        p = _param(np.random.default_rng(2), 6)
        f = lambda: ad.sum(ad.activation(p, "sigmoid"))
        with Tape() as tape:
            loss = f()
        (g,) = ad.grad(loss, tape, [p])
        assert finite_diff_check(f, p, analytic=g * 1.01) >= 5e-3

    def test_detects_non_determinism(self):
        p = _param(np.random.default_rng(3), 3)
        rng = np.random.default_rng(0)
        with pytest.raises(ad.NonDeterministicError):
            finite_diff_check(lambda: ad.sum(p) + float(rng.normal()), p)

    def test_bad_eps(self):
        p = _param(np.random.default_rng(4), 2)
        with pytest.raises(ValueError):
            finite_diff_check(lambda: ad.sum(p), p, eps=0.0)
