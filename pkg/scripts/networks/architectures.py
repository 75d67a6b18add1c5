from typing import Dict, List, Optional, Union

import numpy as np

from scripts.autograd.tensor import Arena, Profile, Tensor, inference_mode
from scripts.layers.conv_spec import ConvSpec
from scripts.layers.functional import concat_channels, max_pool2d, upsample_nearest
from scripts.layers.modules import Conv2d, TransposedConv2d
from scripts.utils.errors import ContractViolation

ARCHITECTURES = ("unet", "dilated-unet", "mfp-unet")
INPUT_CHANNELS = 2
OUTPUT_CHANNELS = 2
LEVELS = 4
PYRAMID_CHANNELS = 16


class DoubleConv:
    """Two 3 x 3 convolutions, each followed by ReLU, extent preserved."""

    def __init__(self, arena: Arena, in_channels: int, out_channels: int, dilation: int):
        self.conv1 = Conv2d(ConvSpec.create(arena, in_channels, out_channels, 3, dilation=dilation))
        self.conv2 = Conv2d(ConvSpec.create(arena, out_channels, out_channels, 3, dilation=dilation))

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for name, layer in (("conv1", self.conv1), ("conv2", self.conv2)):
            for key, tensor in layer.parameters().items():
                params[f"{name}.{key}"] = tensor
        return params


class UpLevel:
    """Up-convolution, skip concatenation with the encoder map, then DoubleConv."""

    def __init__(self, arena: Arena, in_channels: int, out_channels: int, dilation: int):
        self.upconv = TransposedConv2d(
            ConvSpec.create(arena, in_channels, out_channels, 2, stride=2, padding="valid")
        )
        self.block = DoubleConv(arena, 2 * out_channels, out_channels, dilation)

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.block(concat_channels([skip, self.upconv(x)]))

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"upconv.{k}": v for k, v in self.upconv.parameters().items()}
        params.update(self.block.parameters())
        return params


class Model:
    """
    U-net family segmentation network.

    The encoder has four 2 x 2 pooling stages with widths B, 2B, 4B, 8B and a 16B
    bottleneck at N/16. Decoder levels up1..up4 end at full resolution. For
    "mfp-unet" each decoder level also feeds a 3 x 3 conv + ReLU to 16 channels,
    upsampled to N x N; the four maps are concatenated (64 channels) before the
    1 x 1 classifier.

    Args:
        arch (str): "unet", "dilated-unet" or "mfp-unet".
        input_size (int): Square input extent N, divisible by 16.
        base_width (int): Channel width B of the first level.
        dilation (int): Dilation of the encoder/decoder 3 x 3 convolutions.
        profile (Profile): Numeric profile of the parameters.
        seed (int): Seed for weight initialization.

    Raises:
        ContractViolation: On an unknown architecture or invalid N, B, d.
    """

    def __init__(self, arch: str, input_size: int, base_width: int, dilation: int = 1,
                 profile: Profile = Profile.TRAINING, seed: int = 0):
        if arch not in ARCHITECTURES:
            raise ContractViolation(f"unknown architecture '{arch}', expected one of {ARCHITECTURES}")
        if input_size < 16 or input_size % 16:
            raise ContractViolation(f"input size must be a positive multiple of 16, got {input_size}")
        if base_width < 2:
            raise ContractViolation(f"base width must be >= 2, got {base_width}")
        if dilation < 1:
            raise ContractViolation(f"dilation must be >= 1, got {dilation}")
        if arch == "unet" and dilation != 1:
            raise ContractViolation("plain unet uses dilation 1")

        self.arch = arch
        self.input_size = input_size
        self.base_width = base_width
        self.dilation = dilation
        self.profile = profile
        self.seed = seed

        arena = Arena(profile, seed)
        widths = [base_width * 2 ** level for level in range(LEVELS + 1)]
        self.layers: Dict[str, object] = {}

        in_channels = INPUT_CHANNELS
        for level in range(LEVELS):
            self.layers[f"enc{level + 1}"] = DoubleConv(arena, in_channels, widths[level], dilation)
            in_channels = widths[level]
        self.layers["bottleneck"] = DoubleConv(arena, widths[LEVELS - 1], widths[LEVELS], dilation)
        for i in range(LEVELS):
            self.layers[f"up{i + 1}"] = UpLevel(arena, widths[LEVELS - i], widths[LEVELS - 1 - i],
                                                dilation)

        classifier_in = widths[0]
        if arch == "mfp-unet":
            for i in range(LEVELS):
                self.layers[f"pyramid{i + 1}"] = Conv2d(
                    ConvSpec.create(arena, widths[LEVELS - 1 - i], PYRAMID_CHANNELS, 3, dilation=1)
                )
            classifier_in = LEVELS * PYRAMID_CHANNELS
        # raw logits: no ReLU before the softmax
        self.layers["classifier"] = Conv2d(
            ConvSpec.create(arena, classifier_in, OUTPUT_CHANNELS, 1), activation=False
        )

    def parameters(self) -> Dict[str, Tensor]:
        """Parameters keyed by stable dotted names, in construction order."""
        params = {}
        for layer_name, layer in self.layers.items():
            for key, tensor in layer.parameters().items():
                params[f"{layer_name}.{key}"] = tensor
        return params

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.parameters().values()))

    def pyramid_channels(self) -> Optional[int]:
        """Channel count shown to the classifier by the pyramid path (None without one)."""
        if self.arch != "mfp-unet":
            return None
        return self.layers["classifier"].spec.in_channels

    def decoder_levels(self, x: Tensor) -> List[Tensor]:
        """Outputs up1..up4 of the decoder, coarsest first."""
        self._check_input(x)
        skips = []
        h = x
        for level in range(LEVELS):
            h = self.layers[f"enc{level + 1}"](h)
            skips.append(h)
            h = max_pool2d(h)
        h = self.layers["bottleneck"](h)
        levels = []
        for i in range(LEVELS):
            h = self.layers[f"up{i + 1}"](h, skips[LEVELS - 1 - i])
            levels.append(h)
        return levels

    def features(self, x: Tensor) -> Tensor:
        """Feature map fed to the 1 x 1 classifier."""
        levels = self.decoder_levels(x)
        if self.arch != "mfp-unet":
            return levels[-1]
        maps = []
        # concatenation order up4, up3, up2, up1
        for i in reversed(range(LEVELS)):
            factor = 2 ** (LEVELS - 1 - i)
            maps.append(upsample_nearest(self.layers[f"pyramid{i + 1}"](levels[i]), factor))
        return concat_channels(maps)

    def forward(self, x: Tensor) -> Tensor:
        """2-channel logits (background, foreground) at full resolution."""
        return self.layers["classifier"](self.features(x))

    __call__ = forward

    def _check_input(self, x: Tensor) -> None:
        expected = (INPUT_CHANNELS, self.input_size, self.input_size)
        if x.shape[-3:] != expected or x.ndim not in (3, 4):
            raise ContractViolation(f"{self.arch} expects input {expected}, got {x.shape}")

    def __repr__(self) -> str:
        return (f"Model(arch={self.arch}, N={self.input_size}, B={self.base_width}, "
                f"d={self.dilation}, params={self.parameter_count()})")


def build_model(arch: str, input_size: int, base_width: int, dilation: int = 2,
                profile: Profile = Profile.TRAINING, seed: int = 0) -> Model:
    """Dispatch on the architecture tag; plain unet always uses dilation 1."""
    if arch == "unet":
        dilation = 1
    return Model(arch, input_size, base_width, dilation, profile, seed)


def build_unet(input_size: int, base_width: int, profile: Profile = Profile.TRAINING,
               seed: int = 0) -> Model:
    return Model("unet", input_size, base_width, 1, profile, seed)


def build_dilated_unet(input_size: int, base_width: int, dilation: int = 2,
                       profile: Profile = Profile.TRAINING, seed: int = 0) -> Model:
    return Model("dilated-unet", input_size, base_width, dilation, profile, seed)


def build_mfp_unet(input_size: int, base_width: int, dilation: int = 2,
                   profile: Profile = Profile.TRAINING, seed: int = 0) -> Model:
    return Model("mfp-unet", input_size, base_width, dilation, profile, seed)


def forward_segment(model: Model, image_2ch: Union[np.ndarray, Tensor]) -> np.ndarray:
    """
    Segment one 2-channel image.

    Args:
        model (Model): Network with frozen parameters.
        image_2ch (np.ndarray | Tensor): 2 x N x N input (raw image, Niblack channel).

    Returns:
        np.ndarray: N x N uint8 mask, 1 where the foreground logit wins (ties go to
        background).

    Raises:
        ContractViolation: If the input does not match the model's input spec.
    """
    data = image_2ch.data if isinstance(image_2ch, Tensor) else np.asarray(image_2ch)
    expected = (INPUT_CHANNELS, model.input_size, model.input_size)
    if data.shape != expected:
        raise ContractViolation(f"forward_segment expects {expected}, got {data.shape}")
    with inference_mode():
        logits = model.forward(Tensor(data.astype(model.profile.dtype, copy=False)))
    return logits.data.argmax(axis=0).astype(np.uint8)
