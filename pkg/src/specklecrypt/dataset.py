"""Synthetic identity-labeled face corpus and split management.

The corpus stands in for a photographic face dataset: each identity is a
parameter vector (head ellipse, eye geometry, mouth curve, background
shading) rendered procedurally, and each sample of an identity applies a
small seeded variation (sub-pixel jitter, brightness shift, texture
noise). Rendered values are mapped into [0.06, 0.82]: the phase encoding
of the optical channel is 2*pi-periodic, so leaving a gap below 1 keeps
the darkest and brightest pixels distinguishable after encryption.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .fileio import load_image_pgm, save_image_pgm
from .optics import PlainImage
from .rng import check_seed, derive_seed, make_generator

# per-sample variation (applied in render_face)
JITTER_PX = 1.0
BRIGHTNESS_SHIFT = 0.05
TEXTURE_NOISE_SD = 0.02

# rendered output range; the gap up to 1.0 is the phase-wrap guard band
PIXEL_LO = 0.06
PIXEL_HI = 0.82

# sub-stream ids under the corpus seed
_STREAM_IDENTITY = 0
_STREAM_SAMPLE = 1

PARAM_NAMES = (
    "head_cy",
    "head_cx",
    "head_axis_y",
    "head_axis_x",
    "eye_dx",
    "eye_dy",
    "eye_radius",
    "mouth_halfwidth",
    "mouth_curve",
    "bg_base",
    "bg_grad_x",
    "bg_grad_y",
    "face_brightness",
)

# (low, high) generator bounds per parameter, in the order of PARAM_NAMES
PARAM_BOUNDS = (
    (0.42, 0.58),   # head center y, fraction of image size
    (0.42, 0.58),   # head center x
    (0.26, 0.42),   # vertical semi-axis, fraction of size
    (0.20, 0.34),   # horizontal semi-axis
    (0.35, 0.55),   # eye offset x, fraction of head axis
    (0.15, 0.40),   # eye offset y
    (0.04, 0.09),   # eye radius, fraction of size
    (0.35, 0.70),   # mouth half-width, fraction of head axis
    (-2.0, 2.0),    # mouth curvature
    (0.20, 0.75),   # background base level
    (-0.40, 0.40),  # background gradient, x
    (-0.40, 0.40),  # background gradient, y
    (0.50, 1.00),   # face fill brightness
)

EYE_LEVEL = 0.12
MOUTH_LEVEL = 0.16


@dataclass(frozen=True)
class Identity:
    """One synthetic person: id plus the renderer parameter vector."""

    id: int
    params: tuple

    def __post_init__(self):
        if len(self.params) != len(PARAM_NAMES):
            raise ValueError(f"identity needs {len(PARAM_NAMES)} parameters")


@dataclass(frozen=True)
class FaceSample:
    """One rendered image of one identity."""

    identity_id: int
    image: PlainImage
    variation_seed: int


@dataclass(frozen=True)
class Corpus:
    identities: tuple
    samples: tuple
    image_size: int
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    def images(self) -> np.ndarray:
        """All sample images stacked as (n, size, size)."""
        return np.stack([s.image.pixels for s in self.samples])

    def identity_ids(self) -> np.ndarray:
        return np.array([s.identity_id for s in self.samples])


@dataclass(frozen=True)
class SplitSpec:
    """Sizes of the train / evaluation / test partitions."""

    n_train: int
    n_eval: int
    n_test: int

    def __post_init__(self):
        if min(self.n_train, self.n_eval, self.n_test) < 1:
            raise ValueError("each split must contain at least one sample")

    @property
    def total(self) -> int:
        return self.n_train + self.n_eval + self.n_test


@dataclass(frozen=True)
class Split:
    train: tuple
    eval: tuple
    test: tuple


def draw_identity(identity_id: int, rng: np.random.Generator) -> Identity:
    params = tuple(float(rng.uniform(lo, hi)) for lo, hi in PARAM_BOUNDS)
    return Identity(id=identity_id, params=params)


def render_face(params: tuple, image_size: int, variation_seed: int) -> PlainImage:
    """Render one sample of an identity at the given size.

    The per-sample variation (jitter up to +-1 px, brightness shift up to
    +-0.05, additive texture noise sd 0.02) is drawn from variation_seed.
    """
    if image_size < 8:
        raise ValueError(f"image size must be >= 8, got {image_size}")
    p = dict(zip(PARAM_NAMES, params))
    rng = make_generator(variation_seed)
    jy, jx = rng.uniform(-JITTER_PX, JITTER_PX, size=2)
    shift = rng.uniform(-BRIGHTNESS_SHIFT, BRIGHTNESS_SHIFT)

    size = image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = (
        p["bg_base"]
        + p["bg_grad_x"] * (xx / size - 0.5)
        + p["bg_grad_y"] * (yy / size - 0.5)
    )
    cy = p["head_cy"] * size + jy
    cx = p["head_cx"] * size + jx
    ay = p["head_axis_y"] * size
    ax = p["head_axis_x"] * size

    def coverage(signed_dist):
        # ~1 px anti-aliased edge
        return np.clip(0.5 - signed_dist, 0.0, 1.0)

    head = coverage(
        (np.sqrt(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2) - 1.0) * min(ay, ax)
    )
    img = img * (1.0 - head) + p["face_brightness"] * head

    eye_r = p["eye_radius"] * size
    for side in (-1.0, 1.0):
        ey = cy - p["eye_dy"] * ay
        ex = cx + side * p["eye_dx"] * ax
        eye = coverage(np.sqrt((yy - ey) ** 2 + (xx - ex) ** 2) - eye_r)
        img = img * (1.0 - eye) + EYE_LEVEL * eye

    mouth_y = cy + 0.45 * ay
    dx = xx - cx
    half = p["mouth_halfwidth"] * ax
    curve_y = mouth_y + p["mouth_curve"] * (dx / half) ** 2 * ay
    mouth = coverage(np.abs(yy - curve_y) - 0.7) * (np.abs(dx) < half)
    img = img * (1.0 - mouth) + MOUTH_LEVEL * mouth

    img = img + rng.normal(0.0, TEXTURE_NOISE_SD, img.shape) + shift
    img = PIXEL_LO + (PIXEL_HI - PIXEL_LO) * img
    return PlainImage(pixels=np.clip(img, 0.0, 1.0))


def build_corpus(
    n_identities: int, samples_per_identity: int, image_size: int, seed: int
) -> Corpus:
    """Generate a deterministic corpus of rendered identities.

    Args:
        n_identities: number of distinct identities (>= 2).
        samples_per_identity: rendered variations per identity (>= 1).
        image_size: square image side in pixels (>= 8).
        seed: corpus seed; identity parameters and every per-sample
            variation derive from it.
    """
    if n_identities < 2:
        raise ValueError(f"need at least 2 identities, got {n_identities}")
    if samples_per_identity < 1:
        raise ValueError("need at least 1 sample per identity")
    if image_size < 8:
        raise ValueError(f"image size must be >= 8, got {image_size}")
    check_seed(seed)
    identities = []
    samples = []
    for i in range(n_identities):
        identity = draw_identity(i, make_generator(seed, _STREAM_IDENTITY, i))
        identities.append(identity)
        for j in range(samples_per_identity):
            var_seed = derive_seed(seed, _STREAM_SAMPLE, i, j)
            samples.append(
                FaceSample(
                    identity_id=i,
                    image=render_face(identity.params, image_size, var_seed),
                    variation_seed=var_seed,
                )
            )
    return Corpus(
        identities=tuple(identities),
        samples=tuple(samples),
        image_size=image_size,
        seed=seed,
    )


def split(corpus: Corpus, spec: SplitSpec, seed: int) -> Split:
    """Seeded shuffle of the corpus, partitioned into train / eval / test."""
    if spec.total > len(corpus):
        raise ValueError(
            f"split sizes {spec.n_train}+{spec.n_eval}+{spec.n_test} exceed "
            f"corpus size {len(corpus)}"
        )
    order = make_generator(seed).permutation(len(corpus))
    picked = [corpus.samples[i] for i in order]
    a, b = spec.n_train, spec.n_train + spec.n_eval
    c = b + spec.n_test
    return Split(
        train=tuple(picked[:a]), eval=tuple(picked[a:b]), test=tuple(picked[b:c])
    )


def write_corpus(corpus: Corpus, directory) -> str:
    """Persist the corpus as corpus/<identity>/<sample>.pgm plus a manifest.

    Returns the manifest path. The manifest is a JSON array of
    {path, identity_id, variation_seed}, with paths relative to it.
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    entries = []
    counters: dict[int, int] = {}
    for sample in corpus.samples:
        k = counters.get(sample.identity_id, 0)
        counters[sample.identity_id] = k + 1
        rel = os.path.join(f"{sample.identity_id:04d}", f"{k:04d}.pgm")
        full = os.path.join(directory, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        save_image_pgm(sample.image, full)
        entries.append(
            {
                "path": rel,
                "identity_id": sample.identity_id,
                "variation_seed": sample.variation_seed,
            }
        )
    manifest = os.path.join(directory, "manifest.json")
    with open(manifest, "w", encoding="ascii") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")
    return manifest


def load_corpus_images(manifest_path) -> list[FaceSample]:
    """Load samples listed in a manifest (images quantized by the PGM format)."""
    manifest_path = os.fspath(manifest_path)
    base = os.path.dirname(manifest_path)
    with open(manifest_path, "r", encoding="ascii") as fh:
        entries = json.load(fh)
    return [
        FaceSample(
            identity_id=int(e["identity_id"]),
            image=load_image_pgm(os.path.join(base, e["path"])),
            variation_seed=int(e["variation_seed"]),
        )
        for e in entries
    ]
