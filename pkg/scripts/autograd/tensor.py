import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from scripts.utils.errors import ContractViolation


class Profile(Enum):
    """
    Numeric profile of a tensor arena.

    ORACLE (64-bit) is used by gradient checks and tests, TRAINING (32-bit) by the
    training loop. Finite differences are unreliable in 32-bit.
    """

    ORACLE = "float64"
    TRAINING = "float32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Return True when forward operations in this thread record tape nodes."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def inference_mode():
    """
    Disable taping for the current thread.

    Forward passes inside the block produce plain tensors, so frozen parameters can be
    shared by concurrent read-only passes.
    """
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass
class TapeNode:
    """
    One recorded operation.

    Attributes:
        op (str): Operation identifier, e.g. "conv2d" or "max_pool2d".
        inputs (Tuple[Tensor, ...]): Tensors consumed by the operation.
        backward_fn (Callable): Maps the upstream gradient to one gradient per input
            (None for inputs that receive nothing).
        ctx (Dict[str, object]): Captured forward context (argmax indices, geometry).
    """

    op: str
    inputs: Tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    ctx: Dict[str, object] = field(default_factory=dict)


class Tensor:
    """
    Dense row-major array with an optional gradient slot.

    Images are channels-first (C x H x W) with an optional leading batch extent.
    The gradient slot is allocated lazily by `backward`; constants and inputs never
    get one.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype)
        if array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float64)
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self) -> str:
        op = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={op})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other) -> "Tensor":
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other) -> "Tensor":
        return mul(_as_tensor(other, self.dtype), self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_sum(self) * (1.0 / self.data.size)


class Arena:
    """
    Factory for tensors sharing one numeric profile and one random stream.

    Args:
        profile (Profile): ORACLE (float64) or TRAINING (float32).
        seed (int, optional): Seed for parameter initialization.
    """

    def __init__(self, profile: Profile = Profile.ORACLE, seed: Optional[int] = None):
        self.profile = profile
        self.rng = np.random.default_rng(seed)

    @property
    def dtype(self) -> np.dtype:
        return self.profile.dtype

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        return Tensor(np.asarray(data, dtype=self.dtype), requires_grad=requires_grad)

    def zeros(self, shape: Sequence[int], requires_grad: bool = False) -> Tensor:
        return Tensor(np.zeros(tuple(shape), dtype=self.dtype), requires_grad=requires_grad)

    def glorot_uniform(self, shape: Sequence[int], fan_in: int, fan_out: int) -> Tensor:
        """Parameter drawn uniformly from +-sqrt(6 / (fan_in + fan_out))."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        values = self.rng.uniform(-limit, limit, size=tuple(shape))
        return Tensor(values.astype(self.dtype), requires_grad=True)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def attach(data: np.ndarray, inputs: Sequence[Tensor], op: str,
           backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
           **ctx) -> Tensor:
    """
    Wrap the result of a forward computation and record it on the tape.

    Nothing is recorded inside `inference_mode` or when no input requires a gradient.
    """
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), backward_fn, dict(ctx))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return attach(a.data + b.data, (a, b), "add", backward_fn)


def neg(a: Tensor) -> Tensor:
    return attach(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return attach(a.data * b.data, (a, b), "mul", backward_fn)


def tensor_sum(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return attach(np.asarray(a.data.sum(), dtype=a.dtype), (a,), "sum", backward_fn)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Reverse-mode sweep from a scalar loss.

    Every leaf tensor with `requires_grad` reachable from `loss` gets its gradient
    slot filled (added to an existing slot). Intermediate gradients are discarded.

    Args:
        loss (Tensor): Scalar produced by a taped forward pass.

    Raises:
        ContractViolation: If `loss` is not a scalar or carries no tape.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("loss does not depend on any tensor requiring grad")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(_topological_order(loss)):
        upstream = pending.pop(id(tensor), None)
        if upstream is None:
            continue
        if tensor.node is None:
            tensor.grad = upstream.copy() if tensor.grad is None else tensor.grad + upstream
            continue
        for parent, grad in zip(tensor.node.inputs, tensor.node.backward_fn(upstream)):
            if grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + grad if key in pending else grad


def grad_check(f: Callable[[Tensor], Tensor], theta: Tensor, eps: float = 1e-6,
               coordinates: Optional[Sequence[int]] = None) -> float:
    """
    Compare the taped gradient of `f` at `theta` with central finite differences.

    Args:
        f (Callable[[Tensor], Tensor]): Scalar function of `theta`.
        theta (Tensor): Point of evaluation; perturbed in place and restored.
        eps (float): Finite-difference step.
        coordinates (Sequence[int], optional): Flat indices to check. All by default.

    Returns:
        float: max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|) over the checked coordinates.

    Raises:
        ContractViolation: If `eps` is not positive.
    """
    if eps <= 0:
        raise ContractViolation(f"finite-difference step must be positive, got {eps}")

    theta.requires_grad = True
    theta.grad = None
    backward(f(theta))
    if theta.grad is None:
        analytic = np.zeros(theta.data.size, dtype=theta.dtype)
    else:
        analytic = theta.grad.reshape(-1).copy()
    theta.grad = None

    flat = theta.data.reshape(-1)
    indices = range(flat.size) if coordinates is None else coordinates
    worst = 0.0
    with inference_mode():
        for i in indices:
            original = flat[i]
            flat[i] = original + eps
            plus = f(theta).item()
            flat[i] = original - eps
            minus = f(theta).item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            error = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, error)
    return worst
