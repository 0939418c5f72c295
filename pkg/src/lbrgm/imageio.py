"""Binary NetPBM I/O: P5 (gray), P6 (RGB) images and P4 masks.

Pixels are stored as round(v * 255) after clipping to [0, 1] and read back as
byte / 255. Mask bits are 1 for observed pixels.
"""
from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_header(data: bytes, n_fields: int) -> tuple[list[bytes], int]:
    """Whitespace-separated header tokens (comments skipped); returns tokens and payload offset."""
    tokens, pos = [], 0
    while len(tokens) < n_fields:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("unexpected end of header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def to_bytes(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(image) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot store {c}-channel image as PGM/PPM")
    return magic + f"\n{w} {h}\n255\n".encode() + to_bytes(img).tobytes()


def decode_image(data: bytes) -> np.ndarray:
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported image magic {data[:2]!r} (expected P5 or P6)")
    tokens, pos = _read_header(data, 4)
    channels = 1 if tokens[0] == b"P5" else 3
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-numeric image header") from None
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    n = w * h * channels
    raster = data[pos:pos + n]
    if len(raster) != n:
        raise ImageFormatError("unexpected end of image data")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels) / 255.0


def encode_mask(mask) -> bytes:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    return f"P4\n{w} {h}\n".encode() + np.packbits(m, axis=1).tobytes()


def decode_mask(data: bytes) -> np.ndarray:
    if data[:2] != b"P4":
        raise ImageFormatError(f"unsupported mask magic {data[:2]!r} (expected P4)")
    tokens, pos = _read_header(data, 3)
    w, h = int(tokens[1]), int(tokens[2])
    row = (w + 7) // 8
    raster = data[pos:pos + row * h]
    if len(raster) != row * h:
        raise ImageFormatError("unexpected end of mask data")
    bits = np.unpackbits(np.frombuffer(raster, dtype=np.uint8).reshape(h, row), axis=1)
    return bits[:, :w].astype(bool)


def write_image(path, image) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image(image))


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_mask(path, mask) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mask(mask))


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_mask(fh.read())


def write_vector(path, values) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{float(v)!r}\n" for v in np.ravel(values))


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])
