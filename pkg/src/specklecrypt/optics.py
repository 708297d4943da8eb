"""Simulation of the optical encryption channel.

The channel models a coherent beam, phase-modulated by the plaintext
image, propagating through a multiply-scattering medium onto an
intensity-only camera:

1. phase encode:  x_k = exp(i 2*pi p_k) for each pixel value p_k in [0, 1]
2. propagate:     y = T x, with T the complex transmission matrix of the
                  medium (the physical secret key)
3. detect:        I_j = |y_j|^2, linearly normalized so max(I) = 1

The transmission matrix entries are i.i.d. circularly-symmetric complex
Gaussians with per-entry variance 1/n_in, the standard statistical model
of a strongly scattering medium. ``detect_field`` exposes the complex
field before intensity detection (a simulated holographic measurement)
for the exact pseudo-inverse decoding oracle.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .rng import check_seed, make_generator

BITS_PER_MATRIX_ENTRY = 64  # key-length accounting: one complex entry = one 64-bit word


def fingerprint64(array: np.ndarray) -> int:
    """64-bit content hash of an array (first 8 bytes of SHA-256, little-endian)."""
    data = np.ascontiguousarray(array).astype("<c16" if np.iscomplexobj(array) else "<f8")
    return int.from_bytes(hashlib.sha256(data.tobytes()).digest()[:8], "little")


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PlainImage:
    """A real-valued image with pixels in [0, 1], the plaintext."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"plain image must be 2-D, got shape {px.shape}")
        if px.shape[0] < 2 or px.shape[1] < 2:
            raise ValueError(f"plain image must be at least 2x2, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("plain image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("plain image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.pixels.size

    def flat(self) -> np.ndarray:
        """Row-major flattened pixel values."""
        return self.pixels.ravel()


@dataclass(frozen=True, eq=False)
class PhysicalKey:
    """Complex transmission matrix of the scattering medium.

    The matrix is the unclonable physical secret: (seed, n_in, n_out)
    regenerate it exactly, and the fingerprint identifies it in files
    and reports.
    """

    seed: int
    n_in: int
    n_out: int
    matrix: np.ndarray
    fingerprint: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (self.n_out, self.n_in):
            raise ValueError(
                f"key matrix shape {m.shape} does not match (n_out, n_in)="
                f"({self.n_out}, {self.n_in})"
            )
        if not np.all(np.isfinite(m)):
            raise ValueError("key matrix contains non-finite entries")
        object.__setattr__(self, "matrix", _freeze(m))


@dataclass(frozen=True, eq=False)
class SpecklePattern:
    """Normalized speckle intensity image, the ciphertext.

    ``raw_scale`` is the pre-normalization maximum intensity (so noise
    levels stated relative to the signal stay well defined), and
    ``key_fingerprint`` records which physical key produced the pattern.
    Fresh ``encrypt`` output has max value 1; noisy or cropped patterns
    may not.
    """

    pixels: np.ndarray
    raw_scale: float
    key_fingerprint: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"speckle pattern must be 2-D, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("speckle pattern contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("speckle values must lie in [0, 1]")
        if not (np.isfinite(self.raw_scale) and self.raw_scale > 0):
            raise ValueError(f"raw_scale must be positive, got {self.raw_scale}")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.pixels.size

    def flat(self) -> np.ndarray:
        return self.pixels.ravel()


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian detection noise.

    ``sd_fraction`` is the noise standard deviation as a fraction of the
    mean signal value; 0.5 reproduces the "noise amplitude is half of the
    mean signal" condition.
    """

    sd_fraction: float
    seed: int

    def __post_init__(self):
        if not (np.isfinite(self.sd_fraction) and self.sd_fraction >= 0):
            raise ValueError(f"sd_fraction must be >= 0, got {self.sd_fraction}")
        check_seed(self.seed)


@dataclass(frozen=True)
class FovSpec:
    """Rectangular sub-window of a speckle pattern (partial field of view)."""

    origin_row: int
    origin_col: int
    crop_height: int
    crop_width: int

    def __post_init__(self):
        if self.origin_row < 0 or self.origin_col < 0:
            raise ValueError("crop origin must be non-negative")
        if self.crop_height < 1 or self.crop_width < 1:
            raise ValueError("crop size must be at least 1x1")


def generate_key(seed: int, n_in: int, n_out: int) -> PhysicalKey:
    """Draw a fresh transmission matrix from a seeded generator.

    Entries are i.i.d. circular complex Gaussian with variance 1/n_in
    (real and imaginary parts each N(0, 1/(2 n_in))), so the expected
    output energy per detector pixel is 1 for unit-modulus input.

    Args:
        seed: 64-bit generator seed; (seed, n_in, n_out) fully determine
            the matrix and its fingerprint.
        n_in: number of plaintext pixels (input modes).
        n_out: number of speckle pixels (output modes).
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"key dimensions must be >= 1, got n_in={n_in}, n_out={n_out}")
    rng = make_generator(seed)
    sd = np.sqrt(1.0 / (2.0 * n_in))
    re = rng.normal(0.0, sd, size=(n_out, n_in))
    im = rng.normal(0.0, sd, size=(n_out, n_in))
    matrix = re + 1j * im
    return PhysicalKey(
        seed=check_seed(seed),
        n_in=n_in,
        n_out=n_out,
        matrix=matrix,
        fingerprint=fingerprint64(matrix),
    )


def _speckle_shape(key: PhysicalKey, shape: tuple[int, int] | None) -> tuple[int, int]:
    if shape is None:
        side = int(round(np.sqrt(key.n_out)))
        if side * side != key.n_out:
            raise ValueError(
                f"n_out={key.n_out} is not a perfect square; pass an explicit "
                "speckle shape"
            )
        return (side, side)
    h, w = int(shape[0]), int(shape[1])
    if h * w != key.n_out:
        raise ValueError(f"speckle shape {h}x{w} does not factor n_out={key.n_out}")
    return (h, w)


def _check_image_dims(key: PhysicalKey, n_pixels: int) -> None:
    if n_pixels != key.n_in:
        raise ValueError(
            f"image has {n_pixels} pixels but key expects n_in={key.n_in}"
        )


def phase_encode(values: np.ndarray) -> np.ndarray:
    """Map pixel values in [0, 1] to unit-modulus phasors exp(i 2*pi p)."""
    return np.exp(2j * np.pi * np.asarray(values, dtype=np.float64))


def detect_field(key: PhysicalKey, image: PlainImage) -> np.ndarray:
    """Complex field y = T exp(i 2*pi p) before intensity detection.

    This is the simulated holographic measurement used only by the
    pseudo-inverse decoding oracle; a real camera never sees it.
    """
    _check_image_dims(key, image.n_pixels)
    return key.matrix @ phase_encode(image.flat())


def encrypt(
    key: PhysicalKey, image: PlainImage, shape: tuple[int, int] | None = None
) -> SpecklePattern:
    """Encrypt a plaintext image into a normalized speckle pattern.

    Args:
        key: physical key whose n_in matches the image pixel count.
        image: plaintext with values in [0, 1].
        shape: (height, width) of the speckle pattern; must factor n_out.
            Defaults to square when n_out is a perfect square.

    Returns:
        SpecklePattern with max value 1 and raw_scale holding the
        pre-normalization peak intensity.
    """
    out_shape = _speckle_shape(key, shape)
    field = detect_field(key, image)
    intensity = np.abs(field) ** 2
    peak = float(intensity.max())
    if peak <= 0.0:
        raise RuntimeError("scattered field vanished; key matrix is degenerate")
    return SpecklePattern(
        pixels=(intensity / peak).reshape(out_shape),
        raw_scale=peak,
        key_fingerprint=key.fingerprint,
    )


def encrypt_batch(
    key: PhysicalKey,
    images: np.ndarray,
    shape: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized encryption of a stack of images.

    Args:
        key: physical key.
        images: array of shape (n, h, w) or (n, n_in) with values in [0, 1].
        shape: speckle shape, as in ``encrypt``.

    Returns:
        (patterns, raw_scales): patterns with shape (n, sh, sw), each
        normalized to max 1, and the per-pattern raw scales.
    """
    out_shape = _speckle_shape(key, shape)
    stack = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    _check_image_dims(key, stack.shape[1])
    fields = phase_encode(stack) @ key.matrix.T
    intensity = np.abs(fields) ** 2
    scales = intensity.max(axis=1)
    if np.any(scales <= 0.0):
        raise RuntimeError("scattered field vanished; key matrix is degenerate")
    patterns = intensity / scales[:, None]
    return patterns.reshape(len(stack), *out_shape), scales


def add_noise(speckle: SpecklePattern, spec: NoiseSpec) -> SpecklePattern:
    """Add seeded Gaussian noise with sd = sd_fraction * mean(signal), clamped to [0, 1]."""
    if spec.sd_fraction == 0.0:
        return SpecklePattern(
            pixels=speckle.pixels,
            raw_scale=speckle.raw_scale,
            key_fingerprint=speckle.key_fingerprint,
        )
    sigma = spec.sd_fraction * float(speckle.pixels.mean())
    rng = make_generator(spec.seed)
    noisy = speckle.pixels + rng.normal(0.0, sigma, size=speckle.pixels.shape)
    return SpecklePattern(
        pixels=np.clip(noisy, 0.0, 1.0),
        raw_scale=speckle.raw_scale,
        key_fingerprint=speckle.key_fingerprint,
    )


def crop_fov(speckle: SpecklePattern, spec: FovSpec) -> SpecklePattern:
    """Extract a sub-window of the speckle pattern.

    Surviving pixel values are carried over unchanged (no renormalization):
    cropping a stored ciphertext must not alter it.
    """
    r0, c0 = spec.origin_row, spec.origin_col
    r1, c1 = r0 + spec.crop_height, c0 + spec.crop_width
    if r1 > speckle.height or c1 > speckle.width:
        raise ValueError(
            f"crop window rows {r0}:{r1}, cols {c0}:{c1} exceeds speckle "
            f"size {speckle.height}x{speckle.width}"
        )
    return SpecklePattern(
        pixels=speckle.pixels[r0:r1, c0:c1].copy(),
        raw_scale=speckle.raw_scale,
        key_fingerprint=speckle.key_fingerprint,
    )


def key_length_bits_from_dims(n_in: int, n_out: int) -> int:
    """Digital length of the secret key in bits: 64 per complex matrix entry."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"key dimensions must be >= 1, got n_in={n_in}, n_out={n_out}")
    return BITS_PER_MATRIX_ENTRY * n_out * n_in


def key_length_bits(key: PhysicalKey) -> int:
    """Digital length of this key in bits."""
    return key_length_bits_from_dims(key.n_in, key.n_out)
