import numpy as np
import pytest

from scripts.autograd.tensor import Arena, Profile, Tensor, backward, grad_check
from scripts.layers.conv_spec import ConvSpec
from scripts.layers.functional import (concat_channels, conv2d, max_pool2d, relu, slice_channels,
                                       softmax_cross_entropy, transposed_conv2d, upsample_nearest)
from scripts.layers.modules import Conv2d, TransposedConv2d
from scripts.layers.optimizer import OptimizerState, lr_at_epoch, sgd_step
from scripts.utils.errors import ContractViolation


def make_spec(weight, stride=1, dilation=1, padding=(0, 0, 0, 0), bias=None):
    weight = np.asarray(weight, dtype=np.float64)
    out_channels, in_channels, m, _ = weight.shape
    if bias is None:
        bias = np.zeros(out_channels)
    return ConvSpec(in_channels, out_channels, m, stride, dilation, tuple(padding),
                    Tensor(weight, requires_grad=True), Tensor(np.asarray(bias, dtype=np.float64),
                                                              requires_grad=True))


@pytest.fixture
def rng():
    """
    Provides a seeded random generator.
    """
    return np.random.default_rng(1234)


@pytest.fixture
def arena():
    """
    Provides a 64-bit arena for randomly initialized layers.
    """
    return Arena(Profile.ORACLE, seed=5)


class TestConv2d:
    """
    Test cases for the dilated convolution.
    """

    def test_identity_kernel(self, rng):
        """
        A 1 x 1 unit kernel with zero bias reproduces the input.
        """
        x = Tensor(rng.normal(size=(1, 5, 5)))
        y = conv2d(x, make_spec(np.ones((1, 1, 1, 1))))
        np.testing.assert_allclose(y.data, x.data)

    def test_hand_evaluated_diagonal(self):
        """
        [[1, 2], [3, 4]] with kernel [[1, 0], [0, 1]] gives [[5]].
        """
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        y = conv2d(x, make_spec([[[[1.0, 0.0], [0.0, 1.0]]]]))
        np.testing.assert_allclose(y.data, [[[5.0]]])

    def test_dilated_taps(self):
        """
        5 x 5 ones with a 3 x 3 ones kernel at d = 2 gives [[9]].
        """
        x = Tensor(np.ones((1, 5, 5)))
        y = conv2d(x, make_spec(np.ones((1, 1, 3, 3)), dilation=2))
        np.testing.assert_allclose(y.data, [[[9.0]]])

    def test_dilation_equals_zero_inflated_kernel(self, rng):
        """
        A d = 2 kernel equals its zero-inflated 5 x 5 counterpart at d = 1.
        """
        kernel = rng.normal(size=(3, 2, 3, 3))
        inflated = np.zeros((3, 2, 5, 5))
        inflated[:, :, ::2, ::2] = kernel
        x = Tensor(rng.normal(size=(2, 2, 9, 9)))
        dilated = conv2d(x, make_spec(kernel, dilation=2, padding=(2, 2, 2, 2)))
        dense = conv2d(x, make_spec(inflated, padding=(2, 2, 2, 2)))
        np.testing.assert_allclose(dilated.data, dense.data, atol=1e-12)

    def test_same_padding_preserves_extent(self, arena):
        """
        "same" padding keeps H x W for 3 x 3 kernels at d = 1 and d = 2.
        """
        x = arena.tensor(np.ones((2, 16, 16)))
        for d in (1, 2):
            spec = ConvSpec.create(arena, 2, 4, 3, dilation=d)
            assert conv2d(x, spec).shape == (4, 16, 16)
            assert spec.effective_extent == 2 * d + 1

    def test_stride(self):
        """
        Stride 2 samples every other window.
        """
        x = Tensor(np.arange(16.0).reshape(1, 4, 4))
        y = conv2d(x, make_spec(np.ones((1, 1, 1, 1)), stride=2))
        np.testing.assert_allclose(y.data, [[[0.0, 2.0], [8.0, 10.0]]])

    def test_bias_added(self):
        """
        Bias is added to every output pixel of its channel.
        """
        x = Tensor(np.zeros((1, 3, 3)))
        y = conv2d(x, make_spec(np.ones((2, 1, 1, 1)), bias=[1.5, -2.0]))
        np.testing.assert_allclose(y.data[0], 1.5)
        np.testing.assert_allclose(y.data[1], -2.0)

    def test_channel_mismatch(self, rng):
        """
        An input with the wrong channel count is rejected.
        """
        with pytest.raises(ContractViolation):
            conv2d(Tensor(rng.normal(size=(3, 4, 4))), make_spec(np.ones((1, 2, 3, 3))))

    def test_non_positive_extent(self):
        """
        A kernel larger than the padded input is rejected.
        """
        with pytest.raises(ContractViolation):
            conv2d(Tensor(np.ones((1, 2, 2))), make_spec(np.ones((1, 1, 3, 3)), dilation=2))

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("dilation", [1, 2])
    def test_gradients(self, seed, dilation):
        """
        Gradients with respect to input, weight and bias pass the finite-difference check.
        """
        rng = np.random.default_rng(seed)
        pad = dilation
        spec = make_spec(rng.normal(size=(3, 2, 3, 3)), dilation=dilation, padding=(pad,) * 4,
                         bias=rng.normal(size=3))
        x = Tensor(rng.normal(size=(2, 2, 6, 6)))
        coeff = Tensor(rng.normal(size=(2, 3, 6, 6)))

        def loss(_):
            return (conv2d(x, spec) * coeff).sum()

        assert grad_check(loss, x) < 1e-6
        assert grad_check(loss, spec.weight) < 1e-6
        assert grad_check(loss, spec.bias) < 1e-6


class TestPointwiseAndPooling:
    """
    Test cases for ReLU and max pooling.
    """

    def test_relu_values(self):
        """
        -1 -> 0 and 3 -> 3.
        """
        np.testing.assert_array_equal(relu(Tensor([-1.0, 3.0])).data, [0.0, 3.0])

    def test_relu_subgradient(self):
        """
        The gradient at x = [-2, 5] with unit upstream is [0, 1].
        """
        x = Tensor([-2.0, 5.0], requires_grad=True)
        backward(relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_pool_block(self):
        """
        [[1, 2], [3, 4]] pools to [[4]].
        """
        np.testing.assert_array_equal(max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data, [[[4.0]]])

    def test_pool_ramp(self):
        """
        A 4 x 4 row-major ramp pools to [[5, 7], [13, 15]].
        """
        y = max_pool2d(Tensor(np.arange(16.0).reshape(1, 4, 4)))
        np.testing.assert_array_equal(y.data, [[[5.0, 7.0], [13.0, 15.0]]])

    def test_pool_tie_routes_to_first(self):
        """
        A constant block routes its gradient to the top-left element.
        """
        x = Tensor(np.full((1, 2, 2), 5.0), requires_grad=True)
        y = max_pool2d(x)
        np.testing.assert_array_equal(y.data, [[[5.0]]])
        backward(y.sum())
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_pool_odd_extent(self):
        """
        Odd extents cannot be pooled.
        """
        with pytest.raises(ContractViolation):
            max_pool2d(Tensor(np.ones((1, 3, 4))))

    @pytest.mark.parametrize("seed", range(20))
    def test_pool_gradient(self, seed):
        """
        Pooling passes the finite-difference check on tie-free input.
        """
        rng = np.random.default_rng(seed)
        x = Tensor(rng.permutation(64).reshape(1, 4, 4, 4) / 7.0)
        coeff = Tensor(rng.normal(size=(1, 4, 2, 2)))
        assert grad_check(lambda t: (max_pool2d(t) * coeff).sum(), x, eps=1e-4) < 1e-6


class TestTransposedConv:
    """
    Test cases for the stride-2 up-convolution.
    """

    def test_single_scatter(self):
        """
        A 1 x 1 input [v] with kernel K gives v * K.
        """
        kernel = np.array([[1.0, 2.0], [3.0, 4.0]])
        y = transposed_conv2d(Tensor([[[3.0]]]), make_spec(kernel.reshape(1, 1, 2, 2), stride=2))
        np.testing.assert_allclose(y.data, [3.0 * kernel])

    def test_disjoint_windows(self):
        """
        All-ones 2 x 2 input with an all-ones kernel gives 4 x 4 ones.
        """
        y = transposed_conv2d(Tensor(np.ones((1, 2, 2))), make_spec(np.ones((1, 1, 2, 2)), stride=2))
        np.testing.assert_allclose(y.data, np.ones((1, 4, 4)))

    def test_adjoint_of_strided_conv(self, rng):
        """
        <T(x), y> equals <x, C(y)> where C is the stride-2 conv with the swapped kernel.
        """
        weight = rng.normal(size=(3, 2, 2, 2))
        x = Tensor(rng.normal(size=(2, 4, 4)))
        y = Tensor(rng.normal(size=(3, 8, 8)))
        up = transposed_conv2d(x, make_spec(weight, stride=2))
        down = conv2d(y, make_spec(weight.transpose(1, 0, 2, 3), stride=2))
        assert np.isclose((up.data * y.data).sum(), (x.data * down.data).sum())

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients(self, seed):
        """
        Up-convolution gradients pass the finite-difference check.
        """
        rng = np.random.default_rng(seed)
        spec = make_spec(rng.normal(size=(2, 3, 2, 2)), stride=2, bias=rng.normal(size=2))
        x = Tensor(rng.normal(size=(3, 3, 3)))
        coeff = Tensor(rng.normal(size=(2, 6, 6)))

        def loss(_):
            return (transposed_conv2d(x, spec) * coeff).sum()

        assert grad_check(loss, x) < 1e-6
        assert grad_check(loss, spec.weight) < 1e-6
        assert grad_check(loss, spec.bias) < 1e-6

    def test_module_requires_matching_stride(self, arena):
        """
        The up-convolution module rejects a stride that differs from the kernel.
        """
        with pytest.raises(ContractViolation):
            TransposedConv2d(ConvSpec.create(arena, 2, 2, 2, stride=1, padding="valid"))


class TestShapeOps:
    """
    Test cases for upsampling, concatenation and slicing.
    """

    def test_upsample_identity(self, rng):
        """
        Factor 1 is the identity.
        """
        x = Tensor(rng.normal(size=(2, 3, 3)))
        np.testing.assert_array_equal(upsample_nearest(x, 1).data, x.data)

    def test_upsample_replication(self):
        """
        [[1, 2]] at factor 2 becomes [[1, 1, 2, 2], [1, 1, 2, 2]].
        """
        y = upsample_nearest(Tensor([[[1.0, 2.0]]]), 2)
        np.testing.assert_array_equal(y.data, [[[1, 1, 2, 2], [1, 1, 2, 2]]])

    def test_upsample_invalid_factor(self):
        """
        Factor 0 is rejected.
        """
        with pytest.raises(ContractViolation):
            upsample_nearest(Tensor(np.ones((1, 2, 2))), 0)

    def test_upsample_gradient_sums_block(self):
        """
        Each source pixel collects the gradient of its factor x factor block.
        """
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        backward(upsample_nearest(x, 4).sum())
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 2), 16.0))

    def test_concat_single(self, rng):
        """
        Concatenating one map is the identity.
        """
        x = Tensor(rng.normal(size=(3, 4, 4)))
        np.testing.assert_array_equal(concat_channels([x]).data, x.data)

    def test_concat_four_pyramid_maps(self, rng):
        """
        Four 16-channel maps concatenate into one 64-channel map.
        """
        maps = [Tensor(rng.normal(size=(2, 16, 8, 8))) for _ in range(4)]
        assert concat_channels(maps).shape == (2, 64, 8, 8)

    def test_concat_then_slice(self, rng):
        """
        Slicing a concatenation recovers its parts.
        """
        a = Tensor(rng.normal(size=(2, 4, 4)))
        b = Tensor(rng.normal(size=(3, 4, 4)))
        joined = concat_channels([a, b])
        np.testing.assert_array_equal(slice_channels(joined, 0, 2).data, a.data)
        np.testing.assert_array_equal(slice_channels(joined, 2, 5).data, b.data)

    def test_concat_spatial_mismatch(self):
        """
        Maps of different spatial extent cannot be concatenated.
        """
        with pytest.raises(ContractViolation):
            concat_channels([Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 2, 2)))])

    def test_concat_gradient_split(self):
        """
        The gradient of a concatenation is split back per input.
        """
        a = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 2, 2)), requires_grad=True)
        weights = Tensor(np.arange(3.0).reshape(3, 1, 1))
        backward((concat_channels([a, b]) * weights).sum())
        np.testing.assert_array_equal(a.grad, np.zeros((1, 2, 2)))
        np.testing.assert_array_equal(b.grad[1], np.full((2, 2), 2.0))


class TestSoftmaxCrossEntropy:
    """
    Test cases for the pixelwise loss.
    """

    def test_balanced_logits(self, rng):
        """
        Equal logits across channels give ln 2.
        """
        logits = Tensor(np.repeat(rng.normal(size=(1, 4, 4)), 2, axis=0))
        mask = rng.integers(0, 2, size=(4, 4))
        assert softmax_cross_entropy(logits, mask).item() == pytest.approx(np.log(2.0))

    def test_single_pixel(self):
        """
        Logits (0, 1) against class 1 give ln(1 + e^-1) ~ 0.3133.
        """
        loss = softmax_cross_entropy(Tensor(np.array([0.0, 1.0]).reshape(2, 1, 1)), np.ones((1, 1)))
        assert loss.item() == pytest.approx(np.log1p(np.exp(-1.0)))
        assert loss.item() == pytest.approx(0.3133, abs=1e-4)

    def test_large_margin(self):
        """
        A large margin toward the correct class drives the loss to zero.
        """
        loss = softmax_cross_entropy(Tensor(np.array([-50.0, 50.0]).reshape(2, 1, 1)), np.ones((1, 1)))
        assert 0.0 <= loss.item() < 1e-12

    def test_batched(self, rng):
        """
        A batch averages over all pixels of all images.
        """
        logits = rng.normal(size=(3, 2, 4, 4))
        masks = rng.integers(0, 2, size=(3, 4, 4))
        batched = softmax_cross_entropy(Tensor(logits), masks).item()
        single = [softmax_cross_entropy(Tensor(l), m).item() for l, m in zip(logits, masks)]
        assert batched == pytest.approx(np.mean(single))

    def test_non_binary_target(self):
        """
        A target with values outside {0, 1} is rejected.
        """
        with pytest.raises(ContractViolation):
            softmax_cross_entropy(Tensor(np.zeros((2, 2, 2))), np.full((2, 2), 2))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient(self, seed):
        """
        A batch of 2 x 4 x 4 logit maps against random masks passes the check below 1e-6.
        """
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 2, size=(1 + seed % 3, 4, 4))
        logits = Tensor(rng.normal(scale=1.0 + seed % 4, size=(1 + seed % 3, 2, 4, 4)))
        assert grad_check(lambda t: softmax_cross_entropy(t, mask), logits) < 1e-6


class TestSgd:
    """
    Test cases for the optimizer step.
    """

    def test_single_step(self):
        """
        mu = 0, lambda = 0, eta = 0.1, w = 1, grad = 0.5 gives w = 0.95.
        """
        w = Tensor([1.0], requires_grad=True)
        w.grad = np.array([0.5])
        sgd_step({"w": w}, OptimizerState(learning_rate=0.1, momentum=0.0, weight_decay=0.0, lr_decay=0.0))
        np.testing.assert_allclose(w.data, [0.95])
        assert w.grad is None

    def test_zero_gradient_fixed_point(self):
        """
        Zero gradient without decay leaves w unchanged.
        """
        w = Tensor([0.7, -0.2], requires_grad=True)
        w.grad = np.zeros(2)
        sgd_step({"w": w}, OptimizerState(momentum=0.9, weight_decay=0.0))
        np.testing.assert_array_equal(w.data, [0.7, -0.2])

    def test_momentum_second_step(self):
        """
        With mu = 0.9 and constant grad g, the second step moves w by 1.9 g.
        """
        g = 0.25
        w = Tensor([0.0], requires_grad=True)
        state = OptimizerState(learning_rate=1.0, momentum=0.9, weight_decay=0.0, lr_decay=0.0)
        w.grad = np.array([g])
        sgd_step({"w": w}, state)
        before = w.data.copy()
        w.grad = np.array([g])
        sgd_step({"w": w}, state)
        np.testing.assert_allclose(before - w.data, [1.9 * g])

    def test_weight_decay(self):
        """
        Weight decay adds lambda * w to the gradient.
        """
        w = Tensor([2.0], requires_grad=True)
        w.grad = np.zeros(1)
        sgd_step({"w": w}, OptimizerState(learning_rate=0.5, momentum=0.0, weight_decay=0.1, lr_decay=0.0))
        np.testing.assert_allclose(w.data, [2.0 - 0.5 * 0.1 * 2.0])

    def test_missing_gradient(self):
        """
        A parameter without a gradient is rejected.
        """
        with pytest.raises(ContractViolation):
            sgd_step({"w": Tensor([1.0], requires_grad=True)}, OptimizerState())

    def test_lr_schedule(self):
        """
        lr(e) = eta_0 / (1 + delta * e).
        """
        state = OptimizerState(learning_rate=0.001, lr_decay=1e-4)
        assert lr_at_epoch(state, 0) == pytest.approx(0.001)
        assert lr_at_epoch(state, 100) == pytest.approx(0.001 / 1.01)

    def test_module_parameters(self, arena):
        """
        Conv2d exposes its weight and bias.
        """
        layer = Conv2d(ConvSpec.create(arena, 2, 3, 3))
        params = layer.parameters()
        assert params["weight"].shape == (3, 2, 3, 3)
        assert params["bias"].shape == (3,)


class TestTorchOracle:
    """
    Test cases comparing the primitives with torch when it is installed.
    """

    @pytest.mark.parametrize("dilation", [1, 2])
    def test_conv2d_forward_and_backward(self, rng, dilation):
        """
        Forward values and input / weight gradients match torch.nn.functional.conv2d.
        """
        torch = pytest.importorskip("torch")
        weight = rng.normal(size=(4, 3, 3, 3))
        bias = rng.normal(size=4)
        data = rng.normal(size=(2, 3, 10, 10))

        spec = make_spec(weight, dilation=dilation, padding=(dilation,) * 4, bias=bias)
        x = Tensor(data, requires_grad=True)
        out = conv2d(x, spec)
        backward(out.sum())

        tx = torch.tensor(data, requires_grad=True)
        tw = torch.tensor(weight, requires_grad=True)
        tout = torch.nn.functional.conv2d(tx, tw, torch.tensor(bias), padding=dilation, dilation=dilation)
        tout.sum().backward()

        np.testing.assert_allclose(out.data, tout.detach().numpy(), atol=1e-10)
        np.testing.assert_allclose(x.grad, tx.grad.numpy(), atol=1e-10)
        np.testing.assert_allclose(spec.weight.grad, tw.grad.numpy(), atol=1e-10)

    def test_transposed_conv2d(self, rng):
        """
        The up-convolution matches torch.nn.functional.conv_transpose2d.
        """
        torch = pytest.importorskip("torch")
        weight = rng.normal(size=(2, 3, 2, 2))
        data = rng.normal(size=(1, 3, 4, 4))
        out = transposed_conv2d(Tensor(data), make_spec(weight, stride=2))
        expected = torch.nn.functional.conv_transpose2d(
            torch.tensor(data), torch.tensor(weight.transpose(1, 0, 2, 3)), stride=2)
        np.testing.assert_allclose(out.data, expected.numpy(), atol=1e-10)

    def test_max_pool2d(self, rng):
        """
        Pooled values and routed gradients match torch.nn.functional.max_pool2d.
        """
        torch = pytest.importorskip("torch")
        data = rng.normal(size=(2, 3, 6, 6))
        x = Tensor(data, requires_grad=True)
        out = max_pool2d(x)
        backward(out.sum())

        tx = torch.tensor(data, requires_grad=True)
        tout = torch.nn.functional.max_pool2d(tx, 2, 2)
        tout.sum().backward()

        np.testing.assert_array_equal(out.data, tout.detach().numpy())
        np.testing.assert_array_equal(x.grad, tx.grad.numpy())

    def test_cross_entropy(self, rng):
        """
        The loss matches torch.nn.functional.cross_entropy with mean reduction.
        """
        torch = pytest.importorskip("torch")
        logits = rng.normal(size=(2, 2, 5, 5))
        masks = rng.integers(0, 2, size=(2, 5, 5))
        ours = softmax_cross_entropy(Tensor(logits), masks).item()
        theirs = torch.nn.functional.cross_entropy(torch.tensor(logits), torch.tensor(masks)).item()
        assert ours == pytest.approx(theirs)
