import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from specklecrypt import fileio
from specklecrypt.cli import main
from specklecrypt.dataset import build_corpus, write_corpus
from specklecrypt.decoder import TrainConfig
from specklecrypt.harness import CorpusConfig, ExperimentConfig, SplitConfig
from specklecrypt.optics import PlainImage, generate_key


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def tiny_config_dict():
    cfg = ExperimentConfig(
        corpus=CorpusConfig(n_identities=12, samples_per_identity=5, image_size=8, seed=77),
        speckle_shape=(12, 12),
        split=SplitConfig(n_train=40, n_eval=10, n_test=10, seed=3),
        train=TrainConfig(epochs=2, batch_size=8, seed=11),
    )
    return cfg.to_dict()


@pytest.fixture()
def tiny_config_file(tmp_path, tiny_config_dict):
    data = dict(tiny_config_dict)
    data["output_dir"] = str(tmp_path / "runs")
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture()
def tiny_model_file(tmp_path, runner, tiny_config_file):
    out = str(tmp_path / "tiny.spmd")
    result = runner.invoke(main, ["train", "--config", tiny_config_file,
                                  "--out-model", out])
    assert result.exit_code == 0, result.output
    return out


def test_version_lists_format_versions(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "SPKY v1" in result.output
    assert "SPIM v1" in result.output
    assert "SPMD v1" in result.output


def test_every_subcommand_has_help(runner):
    commands = ["keygen", "corpus", "encrypt", "train", "decrypt", "eval",
                "recognize", "sweep-noise", "fov", "attack", "keylen",
                "pipeline", "bench"]
    for name in commands:
        result = runner.invoke(main, [name, "--help"])
        assert result.exit_code == 0, f"{name} --help failed"
        assert "Usage" in result.output


def test_unknown_subcommand_is_usage_error(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2


def test_keylen_paper_dimensions(runner):
    result = runner.invoke(main, ["keylen", "--n-in", "4096", "--n-out", "65536"])
    assert result.exit_code == 0
    assert result.output.strip() == "17179869184"


def test_keylen_requires_arguments(runner):
    result = runner.invoke(main, ["keylen"])
    assert result.exit_code == 2


def test_keygen_and_keylen_from_file(runner, tmp_path):
    key_path = str(tmp_path / "k.spky")
    result = runner.invoke(main, ["keygen", "--seed", "7", "--n-in", "16",
                                  "--n-out", "64", "--out", key_path])
    assert result.exit_code == 0
    loaded = fileio.load_key(key_path)
    assert (loaded.n_in, loaded.n_out, loaded.seed) == (16, 64, 7)
    result = runner.invoke(main, ["keylen", "--key", key_path])
    assert result.output.strip() == str(64 * 16 * 64)


def test_corpus_command(runner, tmp_path):
    out_dir = str(tmp_path / "corpus")
    result = runner.invoke(main, ["corpus", "--out", out_dir, "--identities", "3",
                                  "--samples-per-identity", "2", "--size", "8",
                                  "--seed", "5"])
    assert result.exit_code == 0
    manifest = json.loads(open(os.path.join(out_dir, "manifest.json")).read())
    assert len(manifest) == 6


def test_encrypt_single_image(runner, tmp_path, rng):
    key = generate_key(7, 64, 144)
    key_path = str(tmp_path / "k.spky")
    fileio.save_key(key, key_path)
    img_path = str(tmp_path / "img.pgm")
    fileio.save_image_pgm(PlainImage(pixels=rng.uniform(0, 1, (8, 8))), img_path)
    out_path = str(tmp_path / "s.spim")
    result = runner.invoke(main, ["encrypt", "--key", key_path, "--image", img_path,
                                  "--out", out_path])
    assert result.exit_code == 0
    speckle = fileio.load_speckle(out_path)
    assert speckle.pixels.shape == (12, 12)
    assert speckle.key_fingerprint == key.fingerprint


def test_encrypt_dimension_mismatch_exit_code_and_message(runner, tmp_path, rng):
    key = generate_key(7, 64, 144)
    key_path = str(tmp_path / "k.spky")
    fileio.save_key(key, key_path)
    img_path = str(tmp_path / "img.pgm")
    fileio.save_image_pgm(PlainImage(pixels=rng.uniform(0, 1, (16, 16))), img_path)
    result = runner.invoke(main, ["encrypt", "--key", key_path, "--image", img_path,
                                  "--out", str(tmp_path / "s.spim")])
    assert result.exit_code == 1
    assert "256" in result.output and "64" in result.output


def test_encrypt_batch_from_manifest(runner, tmp_path):
    corpus = build_corpus(3, 2, 8, seed=5)
    manifest = write_corpus(corpus, tmp_path / "corpus")
    key = generate_key(7, 64, 144)
    key_path = str(tmp_path / "k.spky")
    fileio.save_key(key, key_path)
    out_dir = str(tmp_path / "speckles")
    result = runner.invoke(main, ["encrypt", "--key", key_path, "--manifest",
                                  str(manifest), "--out-dir", out_dir])
    assert result.exit_code == 0
    assert len(os.listdir(out_dir)) == 6


def test_decrypt_single(runner, tmp_path, tiny_model_file, rng):
    key = generate_key(7, 64, 144)
    from specklecrypt.optics import encrypt as encrypt_op

    speckle = encrypt_op(key, PlainImage(pixels=rng.uniform(0, 1, (8, 8))))
    spk_path = str(tmp_path / "s.spim")
    fileio.save_speckle(speckle, spk_path)
    out_path = str(tmp_path / "out.pgm")
    result = runner.invoke(main, ["decrypt", "--model", tiny_model_file,
                                  "--speckle", spk_path, "--out", out_path])
    assert result.exit_code == 0
    img = fileio.load_image_pgm(out_path)
    assert img.pixels.shape == (8, 8)


def test_eval_command(runner, tmp_path, tiny_config_file, tiny_model_file):
    result = runner.invoke(main, ["eval", "--config", tiny_config_file,
                                  "--model", tiny_model_file])
    assert result.exit_code == 0
    stats = json.loads(result.output)
    assert stats["label"] == "test" and stats["n"] == 10


def test_recognize_command(runner, tmp_path, tiny_config_file, tiny_model_file):
    result = runner.invoke(main, ["recognize", "--config", tiny_config_file,
                                  "--model", tiny_model_file,
                                  "--thresholds", "0.5,0.6"])
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert len(payload["recognition"]) == 2
    assert len(payload["own_distances"]) == 10


def test_sweep_noise_command(runner, tiny_config_file, tiny_model_file):
    result = runner.invoke(main, ["sweep-noise", "--config", tiny_config_file,
                                  "--model", tiny_model_file,
                                  "--sd-list", "0,0.5", "--threads", "2"])
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert [c["label"] for c in payload["conditions"]] == ["sd_0", "sd_0.5"]


def test_attack_command(runner, tiny_config_file, tiny_model_file):
    result = runner.invoke(main, ["attack", "--config", tiny_config_file,
                                  "--model", tiny_model_file])
    assert result.exit_code == 0
    payload = json.loads(result.output)
    labels = [c["label"] for c in payload["conditions"]]
    assert labels == ["same_key", "wrong_key"]


def test_fov_command(runner, tiny_config_file):
    result = runner.invoke(main, ["fov", "--config", tiny_config_file])
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert [c["label"] for c in payload["conditions"]] == ["full_fov", "partial_fov"]


def test_pipeline_command_deterministic(runner, tmp_path, tiny_config_file):
    r1 = runner.invoke(main, ["pipeline", "--config", tiny_config_file])
    r2 = runner.invoke(main, ["pipeline", "--config", tiny_config_file])
    assert r1.exit_code == 0 and r2.exit_code == 0
    dir1 = r1.output.strip().split("\n")[-1]
    dir2 = r2.output.strip().split("\n")[-1]
    rep1 = json.loads(open(os.path.join(dir1, "report.json")).read())
    rep2 = json.loads(open(os.path.join(dir2, "report.json")).read())
    rep1.pop("wall_clock_s")
    rep2.pop("wall_clock_s")
    assert rep1 == rep2


def test_bench_command(runner):
    result = runner.invoke(main, ["bench", "--sizes", "16x64", "--iterations", "5"])
    assert result.exit_code == 0
    lines = result.output.strip().split("\n")
    assert lines[0] == "n_in,n_out,iterations,median_ms,p95_ms"
    fields = lines[1].split(",")
    assert fields[:3] == ["16", "64", "5"]
    assert float(fields[3]) > 0.0


def test_train_history_output(runner, tmp_path, tiny_config_file):
    out_model = str(tmp_path / "m.spmd")
    history = str(tmp_path / "h.csv")
    result = runner.invoke(main, ["train", "--config", tiny_config_file,
                                  "--out-model", out_model, "--history", history,
                                  "--epochs", "1"])
    assert result.exit_code == 0
    lines = open(history).read().strip().split("\n")
    assert lines[0] == "epoch,train_loss,eval_loss,eval_pcc"
    assert len(lines) == 2  # the --epochs flag overrode the config
