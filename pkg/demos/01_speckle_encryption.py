"""Encrypting face images into speckle patterns.

Walks through the optical channel: generate a physical key (the digital
model of a scattering medium), phase-encode a face image onto it, and
record the resulting speckle intensity. Shows that the ciphertext carries
no visible trace of the plaintext and that the channel only sees phases
(a global brightness offset mod 1 encrypts identically).

Run: python demos/01_speckle_encryption.py
Outputs: demo_output/encryption/
"""

import os

import numpy as np

from specklecrypt import (
    PlainImage,
    build_corpus,
    detect_field,
    encrypt,
    generate_key,
    key_length_bits,
    pcc,
    save_image_pgm,
    save_speckle,
)

OUT = "demo_output/encryption"
os.makedirs(OUT, exist_ok=True)

# ---------------------------------------------------------------- the key
# 256 plaintext pixels scatter into 1024 detector pixels. The matrix is
# fully determined by its seed; a different seed is a different medium.
key = generate_key(seed=7, n_in=16 * 16, n_out=32 * 32)
print(f"physical key: {key.n_out}x{key.n_in} complex entries, "
      f"fingerprint {key.fingerprint:#018x}")
print(f"digital key length: {key_length_bits(key):,} bits")
print(f"(at the full camera/SLM scale of 256x256 x 64x64 this would be "
      f"{64 * 256**2 * 64**2:,} bits, about 17.2 gigabit)")

# ---------------------------------------------------------------- a face
corpus = build_corpus(n_identities=10, samples_per_identity=1, image_size=16, seed=101)
face = corpus.samples[0].image
save_image_pgm(face, f"{OUT}/plaintext.pgm")

speckle = encrypt(key, face)
save_speckle(speckle, f"{OUT}/ciphertext.spim")
upscaled = PlainImage(pixels=speckle.pixels)
save_image_pgm(upscaled, f"{OUT}/ciphertext_preview.pgm")
print(f"\nencrypted {face.height}x{face.width} face -> "
      f"{speckle.height}x{speckle.width} speckle (raw peak intensity "
      f"{speckle.raw_scale:.2f}, stored normalized to max 1)")

# ---------------------------------------------------------- decorrelation
# The ciphertext looks like noise: correlation with the plaintext is tiny.
rng = np.random.Generator(np.random.Philox(1))
values = []
for _ in range(100):
    img = rng.uniform(0.0, 1.0, (16, 16))
    pat = encrypt(key, PlainImage(pixels=img))
    values.append(abs(pcc(img.ravel(), pat.flat()[:256])))
print(f"mean |PCC(plaintext, ciphertext)| over 100 random images: "
      f"{np.mean(values):.4f}")

# ------------------------------------------------------- phase invariance
# Pixel values become phases exp(i 2 pi p); adding a constant (mod 1) to
# every pixel is a global phase and leaves the intensity unchanged.
shifted = PlainImage(pixels=np.mod(face.pixels + 0.37, 1.0))
same = encrypt(key, shifted)
print(f"global value shift of +0.37 (mod 1) changes the speckle by "
      f"{np.abs(same.pixels - speckle.pixels).max():.2e} (nothing)")

# --------------------------------------------------------- field detection
# A holographic detector would see the complex field before the camera
# destroys the phase. That mode exists as the exact decoding oracle.
field = detect_field(key, face)
print(f"\ncomplex field norm {np.linalg.norm(field):.2f}; the camera keeps "
      f"only |field|^2, which is what makes decryption a learning problem")
print(f"\nartifacts in {OUT}/")
