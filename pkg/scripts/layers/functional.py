"""
Differentiable layer primitives.

Every function accepts channels-first tensors either as C x H x W or with a leading
batch extent (B x C x H x W) and returns the same rank it was given.
"""
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from scripts.autograd.tensor import Tensor, attach
from scripts.layers.conv_spec import ConvSpec
from scripts.utils.errors import ContractViolation


def _batched(data: np.ndarray, op: str) -> Tuple[np.ndarray, bool]:
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ContractViolation(f"{op} expects C x H x W or B x C x H x W, got shape {data.shape}")


def _unbatched(data: np.ndarray, squeeze: bool) -> np.ndarray:
    return data[0] if squeeze else data


def output_extent(size: int, kernel: int, stride: int, dilation: int,
                  pad_before: int, pad_after: int) -> int:
    """floor((in + pads - d*(m-1) - 1) / stride) + 1"""
    return (size + pad_before + pad_after - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """
    (Dilated) 2-D convolution on the zero-padded input.

    out[o, i, j] = bias[o] + sum_c sum_{a,b} w[o, c, a, b] * x[c, i*s + a*d, j*s + b*d]

    Raises:
        ContractViolation: On channel mismatch or a non-positive output extent.
    """
    data, squeeze = _batched(x.data, "conv2d")
    batch, channels, height, width = data.shape
    if channels != spec.in_channels:
        raise ContractViolation(
            f"conv2d expects {spec.in_channels} input channels, got {channels}"
        )
    m, d, s = spec.kernel_size, spec.dilation, spec.stride
    top, bottom, left, right = spec.padding
    h_out = output_extent(height, m, s, d, top, bottom)
    w_out = output_extent(width, m, s, d, left, right)
    if h_out < 1 or w_out < 1:
        raise ContractViolation(
            f"conv2d output extent would be {h_out}x{w_out} for input {height}x{width}"
        )

    weight = spec.weight.data
    padded = np.pad(data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    extent = spec.effective_extent
    windows = sliding_window_view(padded, (extent, extent), axis=(2, 3))
    cols = windows[:, :, ::s, ::s, ::d, ::d][:, :, :h_out, :w_out]
    out = np.einsum("bchwij,ocij->bohw", cols, weight, optimize=True)
    out += spec.bias.data[None, :, None, None]

    def backward_fn(g):
        g = g[None] if squeeze else g
        grad_weight = np.einsum("bohw,bchwij->ocij", g, cols, optimize=True)
        grad_bias = g.sum(axis=(0, 2, 3))
        grad_cols = np.einsum("bohw,ocij->bchwij", g, weight, optimize=True)
        # 各タップの勾配をパディング済み入力の位置に足し戻す
        grad_padded = np.zeros_like(padded)
        for a in range(m):
            for b in range(m):
                grad_padded[:, :,
                            a * d: a * d + s * (h_out - 1) + 1: s,
                            b * d: b * d + s * (w_out - 1) + 1: s] += grad_cols[..., a, b]
        grad_x = grad_padded[:, :, top:top + height, left:left + width]
        return _unbatched(grad_x, squeeze), grad_weight, grad_bias

    return attach(_unbatched(out, squeeze), (x, spec.weight, spec.bias), "conv2d",
                  backward_fn, geometry=(m, s, d, spec.padding))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    active = x.data > 0
    return attach(np.where(active, x.data, 0).astype(x.dtype), (x,), "relu",
                  lambda g: (g * active,))


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """
    Non-overlapping 2 x 2 max pooling.

    The gradient goes to the argmax of each block, the first one in row-major order
    on ties.

    Raises:
        ContractViolation: If the window is not 2/2 or H, W are odd.
    """
    if window != 2 or stride != 2:
        raise ContractViolation("max_pool2d supports window 2 with stride 2 only")
    data, squeeze = _batched(x.data, "max_pool2d")
    batch, channels, height, width = data.shape
    if height % 2 or width % 2:
        raise ContractViolation(f"max_pool2d needs even extents, got {height}x{width}")

    # 2x2 ブロックを最後の軸にまとめる
    blocks = (data.reshape(batch, channels, height // 2, 2, width // 2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(batch, channels, height // 2, width // 2, 4))
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        g = g[None] if squeeze else g
        routed = (np.arange(4) == argmax[..., None]) * g[..., None]
        grad_x = (routed.reshape(batch, channels, height // 2, width // 2, 2, 2)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(batch, channels, height, width))
        return (_unbatched(grad_x.astype(data.dtype), squeeze),)

    return attach(_unbatched(out, squeeze), (x,), "max_pool2d", backward_fn, argmax=argmax)


def transposed_conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """
    Transposed convolution without padding.

    Each input element scatters weight * value into its m x m output window,
    overlapping windows add. With m = stride = 2 the extents double.

    Raises:
        ContractViolation: On channel mismatch or a padded / dilated spec.
    """
    data, squeeze = _batched(x.data, "transposed_conv2d")
    batch, channels, height, width = data.shape
    if channels != spec.in_channels:
        raise ContractViolation(
            f"transposed_conv2d expects {spec.in_channels} input channels, got {channels}"
        )
    if spec.dilation != 1 or any(spec.padding):
        raise ContractViolation("transposed_conv2d supports dilation 1 without padding")
    m, s = spec.kernel_size, spec.stride
    weight = spec.weight.data
    h_out, w_out = (height - 1) * s + m, (width - 1) * s + m

    def window(a, b):
        return (slice(None), slice(None),
                slice(a, a + s * (height - 1) + 1, s),
                slice(b, b + s * (width - 1) + 1, s))

    out = np.zeros((batch, spec.out_channels, h_out, w_out), dtype=data.dtype)
    # 重なった窓は加算
    for a in range(m):
        for b in range(m):
            out[window(a, b)] += np.einsum("bchw,oc->bohw", data, weight[:, :, a, b])
    out += spec.bias.data[None, :, None, None]

    def backward_fn(g):
        g = g[None] if squeeze else g
        grad_x = np.zeros_like(data)
        grad_weight = np.zeros_like(weight)
        for a in range(m):
            for b in range(m):
                g_window = g[window(a, b)]
                grad_x += np.einsum("bohw,oc->bchw", g_window, weight[:, :, a, b])
                grad_weight[:, :, a, b] = np.einsum("bohw,bchw->oc", g_window, data)
        return _unbatched(grad_x, squeeze), grad_weight, g.sum(axis=(0, 2, 3))

    return attach(_unbatched(out, squeeze), (x, spec.weight, spec.bias),
                  "transposed_conv2d", backward_fn, geometry=(m, s))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """
    Replicate every pixel factor x factor times.

    Raises:
        ContractViolation: If factor < 1.
    """
    if factor < 1:
        raise ContractViolation(f"upsample factor must be >= 1, got {factor}")
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    lead = x.shape[:-2]
    height, width = x.shape[-2:]

    def backward_fn(g):
        return (g.reshape(*lead, height, factor, width, factor).sum(axis=(-3, -1)),)

    return attach(out, (x,), "upsample_nearest", backward_fn, factor=factor)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """
    Concatenate along the channel axis, preserving input order.

    Raises:
        ContractViolation: If the inputs disagree on rank, batch or spatial extent.
    """
    if not xs:
        raise ContractViolation("concat_channels needs at least one input")
    reference = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(reference) or t.shape[:-3] != reference[:-3] \
                or t.shape[-2:] != reference[-2:]:
            raise ContractViolation(
                f"concat_channels spatial mismatch: {t.shape} vs {reference}"
            )
    offsets = np.cumsum([t.shape[-3] for t in xs])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=-3))

    return attach(np.concatenate([t.data for t in xs], axis=-3), tuple(xs),
                  "concat_channels", backward_fn)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels [start, stop) of `x`."""
    def backward_fn(g):
        grad = np.zeros_like(x.data)
        grad[..., start:stop, :, :] = g
        return (grad,)

    return attach(x.data[..., start:stop, :, :].copy(), (x,), "slice_channels", backward_fn)


def softmax_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """
    Mean pixelwise cross-entropy of a channel softmax against a binary mask.

    Args:
        logits (Tensor): 2 x H x W (or B x 2 x H x W) raw scores.
        target (np.ndarray): H x W (or B x H x W) mask with values in {0, 1}.

    Returns:
        Tensor: Scalar loss; its gradient is (softmax - one_hot) / pixel count.

    Raises:
        ContractViolation: On non-binary targets or shape mismatch.
    """
    data, squeeze = _batched(logits.data, "softmax_cross_entropy")
    labels = np.asarray(target)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.shape != (data.shape[0],) + data.shape[2:]:
        raise ContractViolation(
            f"target shape {np.shape(target)} does not match logits {logits.shape}"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ContractViolation("softmax_cross_entropy target must be binary")

    classes = data.shape[1]
    # チャネル方向の最大値を引いてから exp を取る
    shifted = data - data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    one_hot = (np.arange(classes)[None, :, None, None] == labels[:, None]).astype(data.dtype)
    count = labels.size
    loss = -(one_hot * log_probs).sum() / count

    def backward_fn(g):
        grad = g * (np.exp(log_probs) - one_hot) / count
        return (_unbatched(grad.astype(data.dtype), squeeze),)

    return attach(np.asarray(loss, dtype=data.dtype), (logits,), "softmax_cross_entropy",
                  backward_fn)
