from typing import Dict

from scripts.autograd.tensor import Tensor
from scripts.layers.conv_spec import ConvSpec
from scripts.layers.functional import conv2d, relu, transposed_conv2d
from scripts.utils.errors import ContractViolation


class Conv2d:
    """3 x 3 (or 1 x 1) convolution layer, optionally followed by ReLU."""

    def __init__(self, spec: ConvSpec, activation: bool = True):
        self.spec = spec
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.spec)
        return relu(y) if self.activation else y

    def parameters(self) -> Dict[str, Tensor]:
        return {"weight": self.spec.weight, "bias": self.spec.bias}


class TransposedConv2d:
    """2 x 2, stride-2 up-convolution."""

    def __init__(self, spec: ConvSpec):
        if spec.stride != spec.kernel_size:
            raise ContractViolation("up-convolution expects stride equal to kernel size")
        self.spec = spec

    def __call__(self, x: Tensor) -> Tensor:
        return transposed_conv2d(x, self.spec)

    def parameters(self) -> Dict[str, Tensor]:
        return {"weight": self.spec.weight, "bias": self.spec.bias}
