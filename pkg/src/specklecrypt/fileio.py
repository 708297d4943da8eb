"""Binary file formats for keys, speckle patterns, and images.

All multi-byte values are little-endian.

Key file (SPKY):

    magic "SPKY" | version u16 | seed u64 | n_in u32 | n_out u32
    | matrix entries as (f64 re, f64 im) row-major, n_out x n_in
    | fingerprint u64

Speckle / image file (SPIM), shared by ciphertexts and plaintexts:

    magic "SPIM" | version u16 | height u32 | width u32 | raw_scale f64
    | key_fingerprint u64 (0 for plaintexts; raw_scale then 1.0)
    | pixel values f32 row-major

8-bit binary PGM (P5, maxval 255) is supported for interoperability;
values map by v -> round(v * 255) on write and byte / 255 on read.
"""

import struct

import numpy as np

from .errors import FormatError
from .optics import PhysicalKey, PlainImage, SpecklePattern, fingerprint64

KEY_MAGIC = b"SPKY"
KEY_VERSION = 1
IMAGE_MAGIC = b"SPIM"
IMAGE_VERSION = 1


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"{what} file truncated")
    return data


# ---------------------------------------------------------------------------
# SPKY
# ---------------------------------------------------------------------------


def save_key(key: PhysicalKey, path) -> None:
    with open(path, "wb") as fh:
        fh.write(KEY_MAGIC)
        fh.write(struct.pack("<HQII", KEY_VERSION, key.seed, key.n_in, key.n_out))
        fh.write(np.ascontiguousarray(key.matrix).astype("<c16").tobytes())
        fh.write(struct.pack("<Q", key.fingerprint))


def load_key(path) -> PhysicalKey:
    """Load a key, verifying the stored fingerprint against the matrix bytes."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "key") != KEY_MAGIC:
            raise FormatError("not a key file (bad magic)")
        version, seed, n_in, n_out = struct.unpack("<HQII", _read_exact(fh, 18, "key"))
        if version != KEY_VERSION:
            raise FormatError(f"unsupported key format version {version}")
        raw = _read_exact(fh, 16 * n_in * n_out, "key")
        matrix = np.frombuffer(raw, dtype="<c16").reshape(n_out, n_in).copy()
        (stored_fp,) = struct.unpack("<Q", _read_exact(fh, 8, "key"))
        if fh.read(1):
            raise FormatError("trailing bytes after key payload")
    actual_fp = fingerprint64(matrix)
    if actual_fp != stored_fp:
        raise FormatError(
            f"key fingerprint mismatch: stored {stored_fp:#018x}, "
            f"computed {actual_fp:#018x}"
        )
    return PhysicalKey(seed=seed, n_in=n_in, n_out=n_out, matrix=matrix, fingerprint=stored_fp)


# ---------------------------------------------------------------------------
# SPIM
# ---------------------------------------------------------------------------


def _save_spim(pixels: np.ndarray, raw_scale: float, key_fingerprint: int, path) -> None:
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<HIIdQ", IMAGE_VERSION, h, w, raw_scale, key_fingerprint))
        fh.write(np.ascontiguousarray(pixels).astype("<f4").tobytes())


def save_speckle(speckle: SpecklePattern, path) -> None:
    _save_spim(speckle.pixels, speckle.raw_scale, speckle.key_fingerprint, path)


def save_plain_spim(image: PlainImage, path) -> None:
    _save_spim(image.pixels, 1.0, 0, path)


def load_spim(path) -> SpecklePattern | PlainImage:
    """Load an SPIM file; key_fingerprint 0 marks a plaintext image.

    Pixel values are stored as f32, so a write/read roundtrip quantizes
    float64 data to float32 precision.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "image") != IMAGE_MAGIC:
            raise FormatError("not a speckle/image file (bad magic)")
        version, h, w, raw_scale, key_fp = struct.unpack(
            "<HIIdQ", _read_exact(fh, 26, "image")
        )
        if version != IMAGE_VERSION:
            raise FormatError(f"unsupported image format version {version}")
        raw = _read_exact(fh, 4 * h * w, "image")
        pixels = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after image payload")
    if key_fp == 0:
        return PlainImage(pixels=pixels)
    return SpecklePattern(pixels=pixels, raw_scale=raw_scale, key_fingerprint=key_fp)


def load_speckle(path) -> SpecklePattern:
    obj = load_spim(path)
    if not isinstance(obj, SpecklePattern):
        raise FormatError(f"{path} holds a plaintext image, not a speckle pattern")
    return obj


def load_plain_spim(path) -> PlainImage:
    obj = load_spim(path)
    if not isinstance(obj, PlainImage):
        raise FormatError(f"{path} holds a speckle pattern, not a plaintext image")
    return obj


# ---------------------------------------------------------------------------
# PGM (P5)
# ---------------------------------------------------------------------------


def save_image_pgm(image: PlainImage, path) -> None:
    """Write an 8-bit binary PGM; v in [0, 1] maps to round(v * 255)."""
    data = np.rint(image.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(data: bytes):
    """PGM header tokens, skipping whitespace and # comments."""
    i = 0
    while True:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("PGM header truncated")
        yield data[start:i], i
        i += 1  # single whitespace after each token


def load_image_pgm(path) -> PlainImage:
    """Read an 8-bit binary PGM (P5); byte values map to v = byte / 255.

    Raises:
        FormatError: for non-P5 files, maxval > 255 (16-bit), or malformed
            or truncated content.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        if magic != b"P5":
            raise FormatError(f"not a binary PGM (magic {magic!r}, expected P5)")
        (wtok, _), (htok, _), (mtok, offset) = next(tokens), next(tokens), next(tokens)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (StopIteration, ValueError) as exc:
        raise FormatError("malformed PGM header") from exc
    if maxval > 255:
        raise FormatError(f"16-bit PGM (maxval {maxval}) is not supported")
    if maxval < 1 or width < 1 or height < 1:
        raise FormatError("malformed PGM header")
    start = offset + 1
    raw = data[start : start + width * height]
    if len(raw) != width * height:
        raise FormatError("PGM pixel data truncated")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width) / 255.0
    return PlainImage(pixels=pixels)
