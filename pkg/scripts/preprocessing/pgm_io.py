"""
Binary (P5) PGM reader / writer.

Layout: magic "P5", whitespace, ASCII width, height and maxval (255 only), a single
whitespace byte, then width * height raw bytes in row-major order. Comment lines
starting with '#' are allowed in the header.
"""
import os
from typing import Tuple, Union

import numpy as np

from scripts.utils.errors import ContractViolation, FormatError

PathLike = Union[str, os.PathLike]
_WHITESPACE = b" \t\r\n\v\f"


def _skip_whitespace_and_comments(data: bytes, offset: int) -> int:
    while offset < len(data):
        if data[offset:offset + 1] == b"#":
            end = data.find(b"\n", offset)
            offset = len(data) if end < 0 else end + 1
        elif data[offset] in _WHITESPACE:
            offset += 1
        else:
            break
    return offset


def _read_header_int(data: bytes, offset: int, field: str) -> Tuple[int, int]:
    offset = _skip_whitespace_and_comments(data, offset)
    start = offset
    while offset < len(data) and data[offset:offset + 1].isdigit():
        offset += 1
    if start == offset:
        raise FormatError(f"PGM header: expected {field}", start)
    return int(data[start:offset]), offset


def pgm_decode(data: bytes) -> np.ndarray:
    """
    Decode P5 bytes into an H x W uint8 array.

    Raises:
        FormatError: Bad magic, unsupported maxval, missing header fields or truncated
            pixel data; the message names the byte offset.
    """
    magic = data[:2]
    if magic != b"P5":
        detail = " (ASCII PGM is not supported)" if magic == b"P2" else ""
        raise FormatError(f"bad PGM magic {magic!r}{detail}", 0)
    width, offset = _read_header_int(data, 2, "width")
    height, offset = _read_header_int(data, offset, "height")
    maxval, offset = _read_header_int(data, offset, "maxval")
    if width <= 0 or height <= 0:
        raise FormatError(f"PGM extent must be positive, got {width} x {height}", offset)
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}", offset)
    if offset >= len(data) or data[offset] not in _WHITESPACE:
        raise FormatError("PGM header must end with a single whitespace byte", offset)
    offset += 1

    expected = width * height
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(
            f"PGM pixel data truncated: expected {expected} bytes, got {actual}", offset + actual
        )
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset).reshape(height, width).copy()


def pgm_encode(array: np.ndarray) -> bytes:
    """Encode an H x W array with values in 0..255 as P5 bytes."""
    values = np.asarray(array)
    if values.ndim != 2 or values.size == 0:
        raise ContractViolation(f"PGM needs a non-empty 2-D array, got shape {values.shape}")
    if values.min() < 0 or values.max() > 255:
        raise ContractViolation("PGM values must lie in 0..255")
    height, width = values.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + values.astype(np.uint8).tobytes(order="C")


def pgm_read(path: PathLike) -> np.ndarray:
    """
    Read a P5 PGM file.

    Args:
        path: File path.

    Returns:
        np.ndarray: H x W uint8 array.

    Raises:
        FormatError: Malformed file (the message names the file and byte offset).
        OSError: Unreadable file.
    """
    with open(path, "rb") as f:
        data = f.read()
    try:
        return pgm_decode(data)
    except FormatError as e:
        error = FormatError(f"{path}: {e.args[0]}")
        error.offset = e.offset
        raise error from e


def pgm_write(path: PathLike, array: np.ndarray) -> None:
    """Write an array as P5 PGM; masks should be scaled to {0, 255} by the caller."""
    with open(path, "wb") as f:
        f.write(pgm_encode(array))
