"""
Binary model checkpoints.

Layout (all integers little-endian unsigned 32-bit):
    b"MFPU", version, tag length + UTF-8 tag, N, B, d, parameter count, then per
    parameter: name length + UTF-8 name, rank, extents, float32 little-endian values.
"""
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from scripts.autograd.tensor import Profile
from scripts.networks.architectures import Model
from scripts.utils.errors import FormatError

MAGIC = b"MFPU"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    """
    Attributes:
        version (int): Format version.
        arch (str): Architecture tag.
        input_size (int): N.
        base_width (int): B.
        dilation (int): d.
        parameters (List[Tuple[str, np.ndarray]]): Ordered (name, float32 array) records.
    """

    version: int
    arch: str
    input_size: int
    base_width: int
    dilation: int
    parameters: List[Tuple[str, np.ndarray]]


def encode_checkpoint(model: Model) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION)]

    def put_text(text: str):
        raw = text.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)

    put_text(model.arch)
    chunks += [_U32.pack(model.input_size), _U32.pack(model.base_width), _U32.pack(model.dilation)]
    params = model.parameters()
    chunks.append(_U32.pack(len(params)))
    for name, tensor in params.items():
        put_text(name)
        chunks.append(_U32.pack(tensor.ndim))
        chunks += [_U32.pack(extent) for extent in tensor.shape]
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise FormatError(
                f"checkpoint truncated reading {what}: expected {end} bytes, got {len(self.data)}",
                self.offset,
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what: str) -> str:
        length = self.u32(f"{what} length")
        start = self.offset
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"checkpoint {what} is not UTF-8", start) from e


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        FormatError: Bad magic, unsupported version, truncation or trailing bytes.
    """
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    arch = reader.text("architecture tag")
    input_size = reader.u32("N")
    base_width = reader.u32("B")
    dilation = reader.u32("d")
    count = reader.u32("parameter count")
    parameters = []
    for _ in range(count):
        name = reader.text("parameter name")
        rank = reader.u32(f"{name} rank")
        shape = tuple(reader.u32(f"{name} extent") for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size, f"{name} values"), dtype="<f4").reshape(shape)
        parameters.append((name, values.copy()))
    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} trailing bytes after checkpoint", reader.offset)
    return Checkpoint(version, arch, input_size, base_width, dilation, parameters)


def checkpoint_write(model: Model, path) -> None:
    """Write the model's parameters, in name order of construction, as float32."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(model))


def checkpoint_read(path, expected_arch: Optional[str] = None,
                    profile: Profile = Profile.TRAINING) -> Model:
    """
    Rebuild a model from a checkpoint file.

    Args:
        path: Checkpoint file.
        expected_arch (str, optional): Reject checkpoints of another architecture.
        profile (Profile): Numeric profile of the rebuilt parameters.

    Returns:
        Model: Model with the stored parameters.

    Raises:
        FormatError: On a malformed file, architecture mismatch, or parameter names /
            shapes that differ from a fresh build of the stored configuration.
    """
    with open(path, "rb") as f:
        data = f.read()
    try:
        ckpt = decode_checkpoint(data)
    except FormatError as e:
        error = FormatError(f"{path}: {e.args[0]}")
        error.offset = e.offset
        raise error from e
    if expected_arch is not None and ckpt.arch != expected_arch:
        raise FormatError(f"{path}: checkpoint architecture '{ckpt.arch}' does not match '{expected_arch}'")
    try:
        model = Model(ckpt.arch, ckpt.input_size, ckpt.base_width, ckpt.dilation, profile)
    except ValueError as e:
        raise FormatError(f"{path}: invalid stored configuration: {e}") from e
    load_parameters(model, ckpt.parameters, str(path))
    return model


def load_parameters(model: Model, records: List[Tuple[str, np.ndarray]], source: str = "checkpoint") -> None:
    """Copy (name, array) records into a model after checking names and shapes."""
    params: Dict = model.parameters()
    names = [name for name, _ in records]
    if names != list(params):
        missing = sorted(set(params) - set(names))
        extra = sorted(set(names) - set(params))
        raise FormatError(f"{source}: parameter names differ (missing {missing}, unexpected {extra})")
    for name, values in records:
        target = params[name]
        if values.shape != target.shape:
            raise FormatError(f"{source}: {name} has shape {values.shape}, expected {target.shape}")
        target.data[...] = values.astype(target.dtype)
