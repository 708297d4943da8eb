import numpy as np
import pytest

from specklecrypt import fileio
from specklecrypt.errors import FormatError
from specklecrypt.optics import PlainImage, SpecklePattern, generate_key


# ---------------------------------------------------------------------------
# SPKY
# ---------------------------------------------------------------------------


def test_key_roundtrip(tmp_path):
    key = generate_key(42, 16, 64)
    path = tmp_path / "key.spky"
    fileio.save_key(key, path)
    loaded = fileio.load_key(path)
    assert np.array_equal(loaded.matrix, key.matrix)
    assert loaded.seed == key.seed
    assert loaded.fingerprint == key.fingerprint
    assert (loaded.n_in, loaded.n_out) == (16, 64)


def test_key_bad_magic(tmp_path):
    path = tmp_path / "bad.spky"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        fileio.load_key(path)


def test_key_truncation(tmp_path):
    key = generate_key(42, 16, 64)
    path = tmp_path / "key.spky"
    fileio.save_key(key, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError, match="truncated"):
        fileio.load_key(path)


def test_key_corrupted_matrix_fails_fingerprint(tmp_path):
    key = generate_key(42, 16, 64)
    path = tmp_path / "key.spky"
    fileio.save_key(key, path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0xFF  # inside the matrix payload
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="fingerprint"):
        fileio.load_key(path)


def test_key_version_bump_rejected(tmp_path):
    key = generate_key(42, 4, 8)
    path = tmp_path / "key.spky"
    fileio.save_key(key, path)
    data = bytearray(path.read_bytes())
    data[4] = 99  # version field
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        fileio.load_key(path)


# ---------------------------------------------------------------------------
# SPIM
# ---------------------------------------------------------------------------


def test_speckle_roundtrip_is_f32_exact(tmp_path, rng):
    pixels = rng.uniform(0.0, 1.0, (8, 8)).astype(np.float32).astype(np.float64)
    sp = SpecklePattern(pixels=pixels, raw_scale=3.25, key_fingerprint=99)
    path = tmp_path / "s.spim"
    fileio.save_speckle(sp, path)
    loaded = fileio.load_speckle(path)
    assert np.array_equal(loaded.pixels, pixels)
    assert loaded.raw_scale == 3.25
    assert loaded.key_fingerprint == 99


def test_plain_spim_roundtrip(tmp_path, rng):
    img = PlainImage(pixels=rng.uniform(0.0, 1.0, (8, 8)))
    path = tmp_path / "p.spim"
    fileio.save_plain_spim(img, path)
    loaded = fileio.load_spim(path)
    assert isinstance(loaded, PlainImage)
    assert np.allclose(loaded.pixels, img.pixels, atol=1e-7)


def test_spim_kind_mismatch(tmp_path, rng):
    img = PlainImage(pixels=rng.uniform(0.0, 1.0, (8, 8)))
    path = tmp_path / "p.spim"
    fileio.save_plain_spim(img, path)
    with pytest.raises(FormatError, match="plaintext"):
        fileio.load_speckle(path)


def test_spim_truncation_and_version(tmp_path, rng):
    img = PlainImage(pixels=rng.uniform(0.0, 1.0, (8, 8)))
    path = tmp_path / "p.spim"
    fileio.save_plain_spim(img, path)
    data = bytearray(path.read_bytes())
    path.write_bytes(bytes(data[:-5]))
    with pytest.raises(FormatError, match="truncated"):
        fileio.load_spim(path)
    data[4] = 7
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        fileio.load_spim(path)


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def test_pgm_roundtrip_quantization_bound(tmp_path):
    # worst case error of round(v*255)/255 is 1/510
    grid = np.linspace(0.0, 1.0, 1024).reshape(32, 32)
    img = PlainImage(pixels=grid)
    path = tmp_path / "g.pgm"
    fileio.save_image_pgm(img, path)
    loaded = fileio.load_image_pgm(path)
    assert np.abs(loaded.pixels - grid).max() <= 1.0 / 510 + 1e-12


def test_pgm_all_zero_image(tmp_path):
    img = PlainImage(pixels=np.zeros((4, 6)))
    path = tmp_path / "z.pgm"
    fileio.save_image_pgm(img, path)
    assert path.read_bytes() == b"P5\n6 4\n255\n" + b"\x00" * 24


def test_pgm_rejects_ascii_p2(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(FormatError, match="P5"):
        fileio.load_image_pgm(path)


def test_pgm_rejects_16bit(tmp_path):
    path = tmp_path / "w.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(FormatError, match="16-bit"):
        fileio.load_image_pgm(path)


def test_pgm_rejects_truncated_pixels(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
    with pytest.raises(FormatError, match="truncated"):
        fileio.load_image_pgm(path)


def test_pgm_handles_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff")
    img = fileio.load_image_pgm(path)
    assert img.pixels.shape == (2, 2)
    assert img.pixels[1, 1] == pytest.approx(1.0)
