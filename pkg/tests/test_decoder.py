import numpy as np
import pytest

from specklecrypt import metrics
from specklecrypt.decoder import (
    ComplexDense,
    DecoderModel,
    Modulus,
    OutputSquash,
    TrainConfig,
    align_phase,
    build_decoder,
    cosine_lr,
    forward,
    grad_check,
    load_model,
    loss,
    loss_gradient,
    pinv_decode,
    save_model,
    train,
)
from specklecrypt.errors import FormatError, NumericalError
from specklecrypt.optics import (
    PlainImage,
    SpecklePattern,
    detect_field,
    encrypt,
    generate_key,
)


def tiny_model(seed=0, conv_levels=0):
    return build_decoder((8, 8), (4, 4), seed=seed, conv_levels=conv_levels,
                         base_channels=4)


def random_speckle(rng, size=8):
    return SpecklePattern(
        pixels=rng.uniform(0.0, 1.0, (size, size)), raw_scale=1.0, key_fingerprint=1
    )


# ---------------------------------------------------------------------------
# forward contracts
# ---------------------------------------------------------------------------


def test_zero_weight_dense_outputs_half(rng):
    n_img, n_spk = 16, 64
    layers = [
        ComplexDense(np.zeros((n_img, n_spk), dtype=complex), np.zeros(n_img, dtype=complex)),
        Modulus(),
        OutputSquash(),
    ]
    model = DecoderModel(layers, (8, 8), (4, 4))
    out = forward(model, random_speckle(rng))
    assert np.allclose(out.pixels, 0.5)


def test_forward_outputs_strictly_inside_unit_interval(rng):
    model = tiny_model()
    for _ in range(5):
        out = forward(model, random_speckle(rng))
        assert out.pixels.min() > 0.0
        assert out.pixels.max() < 1.0
        assert out.pixels.shape == (4, 4)


def test_forward_shape_mismatch(rng):
    model = tiny_model()
    with pytest.raises(ValueError, match="does not match model input"):
        forward(model, random_speckle(rng, size=16))


def test_model_must_end_with_squash():
    with pytest.raises(ValueError, match="OutputSquash"):
        DecoderModel([Modulus()], (8, 8), (4, 4))


def test_input_mode_amplitude_takes_sqrt(rng):
    m_amp = tiny_model()
    m_int = DecoderModel(
        [type(l)(*(p.copy() for p in l.params)) if l.params else type(l)()
         for l in m_amp.layers],
        (8, 8), (4, 4), input_mode="intensity",
    )
    sp = random_speckle(rng)
    amp_out = forward(m_amp, sp)
    int_out = forward(
        m_int,
        SpecklePattern(pixels=np.sqrt(sp.pixels), raw_scale=1.0, key_fingerprint=1),
    )
    assert np.allclose(amp_out.pixels, int_out.pixels)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_of_identical_images(rng):
    y = rng.uniform(0.0, 1.0, (6, 6))
    assert loss(y, y) == pytest.approx(-1.0, abs=1e-12)


def test_loss_anticorrelated(rng):
    y = rng.uniform(0.0, 1.0, (6, 6))
    yhat = -y + 1.0
    assert loss(yhat, y) == pytest.approx(metrics.mse(y, yhat) + 1.0, abs=1e-12)


def test_loss_cross_module_consistency(rng):
    for _ in range(10):
        y = rng.uniform(0.0, 1.0, (6, 6))
        yhat = rng.uniform(0.0, 1.0, (6, 6))
        expected = metrics.mse(y, yhat) - metrics.pcc(y, yhat)
        assert loss(yhat, y) == pytest.approx(expected, abs=1e-12)


def test_loss_constant_prediction_falls_back_to_mse(rng, caplog):
    y = rng.uniform(0.0, 1.0, (6, 6))
    yhat = np.full_like(y, 0.4)
    with caplog.at_level("WARNING"):
        value = loss(yhat, y)
    assert value == pytest.approx(metrics.mse(y, yhat))
    assert "constant" in caplog.text


def test_loss_gradient_matches_finite_differences(rng):
    y = rng.uniform(0.0, 1.0, (6, 6))
    yhat = rng.uniform(0.05, 0.95, (6, 6))
    grad = loss_gradient(yhat, y)
    h = 1e-5
    worst = 0.0
    for k in range(yhat.size):
        plus = yhat.copy()
        minus = yhat.copy()
        plus.flat[k] += h
        minus.flat[k] -= h
        fd = (loss(plus, y) - loss(minus, y)) / (2 * h)
        err = abs(fd - grad.flat[k]) / max(abs(fd), abs(grad.flat[k]), 1e-12)
        worst = max(worst, err)
    assert worst < 1e-4


def test_loss_gradient_at_identity_is_pcc_gradient(rng):
    y = rng.uniform(0.0, 1.0, (6, 6))
    grad = loss_gradient(y, y)
    # MSE term vanishes at yhat = y, leaving -dPCC/dyhat
    h = 1e-6
    k = 7
    plus, minus = y.copy(), y.copy()
    plus.flat[k] += h
    minus.flat[k] -= h
    fd_pcc = (metrics.pcc(y, plus) - metrics.pcc(y, minus)) / (2 * h)
    assert grad.flat[k] == pytest.approx(-fd_pcc, rel=1e-3)


def test_pcc_gradient_sums_to_zero(rng):
    # PCC is invariant to constant shifts, so its gradient must sum to 0;
    # the loss gradient sum therefore equals the MSE gradient sum.
    y = rng.uniform(0.0, 1.0, (6, 6))
    yhat = rng.uniform(0.0, 1.0, (6, 6))
    total = loss_gradient(yhat, y).sum() - (2.0 * (yhat - y) / yhat.size).sum()
    assert abs(total) < 1e-9


# ---------------------------------------------------------------------------
# gradient checks per layer type
# ---------------------------------------------------------------------------


def test_grad_check_dense_model(rng):
    model = tiny_model(seed=3)
    sample = (rng.uniform(0.0, 1.0, (8, 8)), rng.uniform(0.0, 1.0, (4, 4)))
    assert grad_check(model, sample, n_params=200, seed=1) < 1e-4


def test_grad_check_conv_model(rng):
    model = tiny_model(seed=4, conv_levels=1)
    sample = (rng.uniform(0.0, 1.0, (8, 8)), rng.uniform(0.0, 1.0, (4, 4)))
    assert grad_check(model, sample, n_params=200, seed=2) < 1e-4


def test_grad_check_two_level_conv_model(rng):
    model = build_decoder((8, 8), (4, 4), seed=5, conv_levels=2, base_channels=3)
    sample = (rng.uniform(0.0, 1.0, (8, 8)), rng.uniform(0.0, 1.0, (4, 4)))
    assert grad_check(model, sample, n_params=150, seed=3) < 1e-4


def test_grad_check_handles_dead_units(rng):
    # zero weights give exactly zero gradients for the dense weight matrix
    # (output is constant 0.5 so the MSE-only fallback is active and the
    # bias path is dead); absolute-error fallback keeps the check finite
    n_img, n_spk = 16, 64
    layers = [
        ComplexDense(np.zeros((n_img, n_spk), dtype=complex), np.zeros(n_img, dtype=complex)),
        Modulus(),
        OutputSquash(),
    ]
    model = DecoderModel(layers, (8, 8), (4, 4))
    sample = (rng.uniform(0.0, 1.0, (8, 8)), rng.uniform(0.0, 1.0, (4, 4)))
    assert grad_check(model, sample, n_params=50, seed=4) < 1e-4


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 0.15) == pytest.approx(0.15)
    assert cosine_lr(99, 100, 0.15) < 0.15 * 2.5e-4
    assert cosine_lr(50, 100, 0.15) == pytest.approx(0.075)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def make_toy_problem(rng, n=64):
    # low-dimensional image family so held-out performance can improve
    key = generate_key(21, 16, 64)
    basis = rng.uniform(-1.0, 1.0, (3, 4, 4))
    coeff = rng.uniform(0.0, 1.0, (n, 3))
    images = np.clip(0.4 + 0.15 * np.einsum("nk,khw->nhw", coeff, basis), 0.0, 1.0)
    from specklecrypt.optics import encrypt_batch

    speckles, _ = encrypt_batch(key, images)
    return speckles, images


def test_train_is_deterministic(rng):
    speckles, images = make_toy_problem(rng)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=5)
    model = tiny_model(seed=6)
    m1, h1 = train(model, (speckles[:48], images[:48]), (speckles[48:], images[48:]), cfg)
    m2, h2 = train(model, (speckles[:48], images[:48]), (speckles[48:], images[48:]), cfg)
    for l1, l2 in zip(m1.layers, m2.layers):
        for p1, p2 in zip(l1.params, l2.params):
            assert np.array_equal(p1, p2)
    assert h1.eval_pcc == h2.eval_pcc
    assert h1.train_loss == h2.train_loss


def test_train_does_not_mutate_input_model(rng):
    speckles, images = make_toy_problem(rng)
    model = tiny_model(seed=6)
    before = [p.copy() for l in model.layers for p in l.params]
    train(model, (speckles[:48], images[:48]), (speckles[48:], images[48:]),
          TrainConfig(epochs=1, batch_size=8, seed=5))
    after = [p for l in model.layers for p in l.params]
    for b, a in zip(before, after):
        assert np.array_equal(b, a)


def test_train_reduces_loss_on_toy_problem(rng):
    speckles, images = make_toy_problem(rng, n=128)
    cfg = TrainConfig(epochs=10, batch_size=16, seed=5)
    model = tiny_model(seed=6)
    trained, hist = train(model, (speckles[:96], images[:96]),
                          (speckles[96:], images[96:]), cfg)
    assert hist.eval_loss[-1] < hist.eval_loss[0]
    assert len(hist.eval_pcc) == 10


def test_train_rejects_shape_mismatch(rng):
    speckles, images = make_toy_problem(rng)
    model = tiny_model()
    with pytest.raises(ValueError):
        train(model, (speckles, rng.uniform(0, 1, (64, 5, 5))),
              (speckles, images), TrainConfig(epochs=1, seed=0))


def test_train_accepts_typed_pairs(rng):
    speckles, images = make_toy_problem(rng, n=8)
    pairs = [
        (SpecklePattern(pixels=s, raw_scale=1.0, key_fingerprint=1),
         PlainImage(pixels=p))
        for s, p in zip(speckles, images)
    ]
    model = tiny_model()
    trained, hist = train(model, pairs, pairs, TrainConfig(epochs=1, batch_size=4, seed=0))
    assert len(hist.eval_pcc) == 1


def test_history_csv(tmp_path):
    from specklecrypt.decoder import TrainHistory

    hist = TrainHistory(train_loss=[0.5, 0.25], eval_loss=[0.6, 0.3], eval_pcc=[0.1, 0.9])
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,eval_loss,eval_pcc"
    assert lines[1].startswith("1,0.5,0.6,")
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# pseudo-inverse oracle
# ---------------------------------------------------------------------------


def test_pinv_decode_roundtrip(rng):
    key = generate_key(31, 64, 256)
    img = PlainImage(pixels=rng.uniform(0.0, 1.0, (8, 8)))
    fld = detect_field(key, img)
    recovered = align_phase(pinv_decode(key, fld), img)
    assert np.abs(recovered.pixels - img.pixels).max() < 1e-6
    assert metrics.pcc(img.pixels, recovered.pixels) >= 1.0 - 1e-6


def test_pinv_decode_requires_overdetermined_system():
    key = generate_key(31, 64, 16)
    with pytest.raises(ValueError, match="n_out >= n_in"):
        pinv_decode(key, np.zeros(16, dtype=complex))


def test_pinv_decode_field_length_checked():
    key = generate_key(31, 16, 64)
    with pytest.raises(ValueError, match="does not match n_out"):
        pinv_decode(key, np.zeros(32, dtype=complex))


def test_pinv_decode_flags_ill_conditioned():
    # a rank-deficient matrix drives the normal-equations condition estimate
    # past the limit once the ridge is the only thing keeping it invertible
    base = generate_key(31, 16, 64)
    matrix = np.asarray(base.matrix).copy()
    matrix[:, 1:] = 0.0
    matrix[:, 0] *= 100.0  # spread eigenvalues past the ridge by > 1e12
    from specklecrypt.optics import PhysicalKey, fingerprint64

    bad = PhysicalKey(seed=0, n_in=16, n_out=64, matrix=matrix,
                      fingerprint=fingerprint64(matrix))
    with pytest.raises(NumericalError, match="condition"):
        pinv_decode(bad, np.zeros(64, dtype=complex))


# ---------------------------------------------------------------------------
# model file roundtrip
# ---------------------------------------------------------------------------


def test_save_load_forward_is_bitwise(tmp_path, rng):
    model = tiny_model(seed=9, conv_levels=1)
    path = tmp_path / "model.spmd"
    save_model(model, path)
    loaded = load_model(path)
    sp = random_speckle(rng)
    assert np.array_equal(forward(model, sp).pixels, forward(loaded, sp).pixels)
    assert loaded.input_mode == model.input_mode
    assert loaded.speckle_shape == model.speckle_shape


def test_load_model_truncated(tmp_path):
    model = tiny_model(seed=9)
    path = tmp_path / "model.spmd"
    save_model(model, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 16])
    with pytest.raises(FormatError, match="truncated"):
        load_model(path)


def test_load_model_bad_magic(tmp_path):
    path = tmp_path / "model.spmd"
    path.write_bytes(b"XXXX" + b"\x00" * 30)
    with pytest.raises(FormatError, match="magic"):
        load_model(path)


def test_load_model_version_bump(tmp_path):
    model = tiny_model(seed=9)
    path = tmp_path / "model.spmd"
    save_model(model, path)
    data = bytearray(path.read_bytes())
    data[4] = 42
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="unsupported model format version"):
        load_model(path)
