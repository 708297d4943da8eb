"""Command-line entry point.

Configuration precedence is flags > config file > built-in defaults; the
effective config is echoed into every emitted report. Exit status is 0 on
success, 1 on a domain error (bad data, dimension mismatch, format
violation), and 2 on a usage error. Diagnostics go to stderr; data goes
to files or stdout.
"""

import functools
import json
import os
import sys
import time
from importlib import metadata

import click
import numpy as np

from . import dataset as ds
from . import decoder as dec
from . import fileio
from . import harness
from . import recognizer as rec
from .errors import SpeckleCryptError
from .optics import (
    PlainImage,
    encrypt as encrypt_op,
    generate_key,
    key_length_bits,
    key_length_bits_from_dims,
)
from .rng import make_generator


def _tool_version() -> str:
    try:
        return metadata.version("specklecrypt")
    except metadata.PackageNotFoundError:
        return "unknown"


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(
        f"specklecrypt {_tool_version()} "
        f"(formats: SPKY v{fileio.KEY_VERSION}, SPIM v{fileio.IMAGE_VERSION}, "
        f"SPMD v{dec.MODEL_VERSION})"
    )
    ctx.exit()


def _domain_errors(fn):
    """Map domain failures to exit status 1 with the message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SpeckleCryptError, ValueError, KeyError, OSError, RuntimeError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _load_config(config_path, output_dir=None, epochs=None, learning_rate=None,
                 batch_size=None) -> harness.ExperimentConfig:
    if config_path is None:
        cfg = harness.ExperimentConfig()
    else:
        cfg = harness.ExperimentConfig.from_json_file(config_path)
    data = cfg.to_dict()
    if output_dir is not None:
        data["output_dir"] = output_dir
    if epochs is not None:
        data["train"]["epochs"] = epochs
    if learning_rate is not None:
        data["train"]["learning_rate"] = learning_rate
    if batch_size is not None:
        data["train"]["batch_size"] = batch_size
    return harness.ExperimentConfig.from_dict(data)


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=1)
    if out is None:
        click.echo(text)
    else:
        with open(out, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
        click.echo(f"wrote {out}", err=True)


def _load_image(path) -> PlainImage:
    if str(path).endswith(".pgm"):
        return fileio.load_image_pgm(path)
    return fileio.load_plain_spim(path)


def _save_image(image: PlainImage, path) -> None:
    if str(path).endswith(".pgm"):
        fileio.save_image_pgm(image, path)
    else:
        fileio.save_plain_spim(image, path)


_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="Experiment config JSON (defaults used when omitted).",
)


@click.group()
@click.option(
    "--version", is_flag=True, callback=_print_version, expose_value=False,
    is_eager=True, help="Print tool and file-format versions and exit.",
)
def main():
    """Speckle-based optical cryptosystem toolkit."""


@main.command()
@click.option("--seed", type=int, required=True, help="Key generator seed.")
@click.option("--n-in", type=int, required=True, help="Plaintext pixel count.")
@click.option("--n-out", type=int, required=True, help="Speckle pixel count.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_domain_errors
def keygen(seed, n_in, n_out, out):
    """Generate a physical key and write it as an SPKY file."""
    key = generate_key(seed, n_in, n_out)
    fileio.save_key(key, out)
    click.echo(f"key fingerprint {key.fingerprint:#018x} -> {out}", err=True)


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--identities", type=int, default=220, show_default=True)
@click.option("--samples-per-identity", type=int, default=10, show_default=True)
@click.option("--size", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=101, show_default=True)
@_domain_errors
def corpus(out_dir, identities, samples_per_identity, size, seed):
    """Render a synthetic face corpus to PGM files plus a manifest."""
    c = ds.build_corpus(identities, samples_per_identity, size, seed)
    manifest = ds.write_corpus(c, out_dir)
    click.echo(f"{len(c)} samples -> {manifest}", err=True)


@main.command()
@click.option("--key", "key_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), default=None,
              help="Single plaintext (.pgm or .spim).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--manifest", type=click.Path(exists=True), default=None,
              help="Corpus manifest for batch encryption.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--shape", default=None, help="Speckle shape HxW (default square).")
@_domain_errors
def encrypt(key_path, image_path, out, manifest, out_dir, shape):
    """Encrypt plaintext image(s) into speckle pattern(s)."""
    key = fileio.load_key(key_path)
    speckle_shape = None
    if shape is not None:
        h, w = shape.lower().split("x")
        speckle_shape = (int(h), int(w))
    if image_path is not None:
        if out is None:
            raise click.UsageError("--image requires --out")
        pattern = encrypt_op(key, _load_image(image_path), speckle_shape)
        fileio.save_speckle(pattern, out)
        click.echo(f"wrote {out}", err=True)
    elif manifest is not None:
        if out_dir is None:
            raise click.UsageError("--manifest requires --out-dir")
        os.makedirs(out_dir, exist_ok=True)
        samples = ds.load_corpus_images(manifest)
        for i, sample in enumerate(samples):
            pattern = encrypt_op(key, sample.image, speckle_shape)
            fileio.save_speckle(pattern, os.path.join(out_dir, f"{i:05d}.spim"))
        click.echo(f"encrypted {len(samples)} images -> {out_dir}", err=True)
    else:
        raise click.UsageError("pass either --image or --manifest")


@main.command()
@_config_option
@click.option("--out-model", type=click.Path(dir_okay=False), default="model.spmd",
              show_default=True)
@click.option("--history", "history_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-epoch training curve CSV here.")
@click.option("--epochs", type=int, default=None, help="Override config epochs.")
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@_domain_errors
def train(config_path, out_model, history_path, epochs, learning_rate, batch_size):
    """Train the decoder defined by the config and save it."""
    cfg = _load_config(config_path, epochs=epochs, learning_rate=learning_rate,
                       batch_size=batch_size)
    data = harness.prepare_experiment(cfg)
    model, history = harness.train_decoder(data)
    dec.save_model(model, out_model)
    if history_path:
        history.to_csv(history_path)
    click.echo(
        f"final eval PCC {history.eval_pcc[-1]:.4f} -> {out_model}", err=True
    )


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--speckle", "speckle_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output image (.pgm or .spim).")
@click.option("--in-dir", type=click.Path(file_okay=False, exists=True), default=None,
              help="Decrypt every .spim file in this directory.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@_domain_errors
def decrypt(model_path, speckle_path, out, in_dir, out_dir):
    """Decrypt speckle pattern(s) with a trained decoder."""
    model = dec.load_model(model_path)
    if speckle_path is not None:
        if out is None:
            raise click.UsageError("--speckle requires --out")
        image = dec.forward(model, fileio.load_speckle(speckle_path))
        _save_image(image, out)
        click.echo(f"wrote {out}", err=True)
    elif in_dir is not None:
        if out_dir is None:
            raise click.UsageError("--in-dir requires --out-dir")
        os.makedirs(out_dir, exist_ok=True)
        names = sorted(n for n in os.listdir(in_dir) if n.endswith(".spim"))
        for name in names:
            image = dec.forward(model, fileio.load_speckle(os.path.join(in_dir, name)))
            _save_image(image, os.path.join(out_dir, name.replace(".spim", ".pgm")))
        click.echo(f"decrypted {len(names)} patterns -> {out_dir}", err=True)
    else:
        raise click.UsageError("pass either --speckle or --in-dir")


@main.command(name="eval")
@_config_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_domain_errors
def eval_cmd(config_path, model_path, out):
    """Decode the config's test split and report mean similarity metrics."""
    cfg = _load_config(config_path)
    data = harness.prepare_experiment(cfg)
    model = dec.load_model(model_path)
    decoded = model.decode_batch(data.speckle["test"])
    stats = harness.condition_stats("test", decoded, data.plain["test"])
    _emit(stats.to_dict(), out)


@main.command()
@_config_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--thresholds", default=None, help="Comma-separated threshold list.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write CSV here instead of JSON to stdout.")
@_domain_errors
def recognize(config_path, model_path, thresholds, out):
    """Run the recognition threshold sweep on decrypted test images."""
    cfg = _load_config(config_path)
    data = harness.prepare_experiment(cfg)
    model = dec.load_model(model_path)
    decoded = model.decode_batch(data.speckle["test"])
    sweep = (
        tuple(float(t) for t in thresholds.split(","))
        if thresholds
        else cfg.recognition.thresholds
    )
    rows, own = harness.evaluate_recognition(
        data.plain["test"], decoded, cfg.recognition.model(), sweep
    )
    if out and out.endswith(".csv"):
        reports = [
            rec.RecognitionReport(
                threshold=r["threshold"], recall=r["recall"], precision=r["precision"],
                accuracy=r["accuracy"], f1=r["f1"],
            )
            for r in rows
        ]
        rec.sweep_to_csv(reports, out)
        click.echo(f"wrote {out}", err=True)
    else:
        _emit({"recognition": rows, "own_distances": own}, out)


@main.command(name="sweep-noise")
@_config_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--sd-list", default=None, help="Comma-separated noise SD fractions.")
@click.option("--threads", type=int, default=None,
              help="Worker cap for sweep conditions (default: CPU count).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_domain_errors
def sweep_noise(config_path, model_path, sd_list, threads, out):
    """Evaluate decoding under increasing ciphertext noise."""
    cfg = _load_config(config_path)
    data = harness.prepare_experiment(cfg)
    model = dec.load_model(model_path)
    sds = (
        tuple(float(s) for s in sd_list.split(","))
        if sd_list
        else cfg.noise.sd_list
    )
    report = harness.noise_sweep(
        model,
        data.speckle["test"],
        data.plain["test"],
        data.key,
        sd_list=sds,
        seed=cfg.noise.seed,
        threads=threads or os.cpu_count(),
    )
    _emit(report.to_dict(), out)


@main.command()
@_config_option
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_domain_errors
def fov(config_path, out):
    """Train paired decoders on the full and partial field of view."""
    cfg = _load_config(config_path)
    report = harness.fov_experiment(cfg)
    _emit(report.to_dict(), out)


@main.command()
@_config_option
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_domain_errors
def attack(config_path, model_path, out):
    """Wrong-physical-key attack: decode ciphertexts from another medium."""
    cfg = _load_config(config_path)
    data = harness.prepare_experiment(cfg)
    model = dec.load_model(model_path)
    key_b = generate_key(
        cfg.wrong_key_seed, data.key.n_in, data.key.n_out
    )
    report = harness.wrong_key_attack(
        model, data.key, key_b, data.plain["test"], cfg.speckle_shape
    )
    _emit(report.to_dict(), out)


@main.command()
@click.option("--n-in", type=int, default=None, help="Plaintext pixel count.")
@click.option("--n-out", type=int, default=None, help="Speckle pixel count.")
@click.option("--key", "key_path", type=click.Path(exists=True), default=None,
              help="Compute from an existing key file instead.")
@_domain_errors
def keylen(n_in, n_out, key_path):
    """Print the digital secret-key length in bits."""
    if key_path is not None:
        bits = key_length_bits(fileio.load_key(key_path))
    elif n_in is not None and n_out is not None:
        bits = key_length_bits_from_dims(n_in, n_out)
    else:
        raise click.UsageError("pass --n-in and --n-out, or --key")
    click.echo(str(bits))


@main.command()
@_config_option
@click.option("--output-dir", default=None, help="Override the config output dir.")
@_domain_errors
def pipeline(config_path, output_dir):
    """Full run: corpus, encryption, training, metrics, recognition sweep."""
    cfg = _load_config(config_path, output_dir=output_dir)
    report, run_dir = harness.run_pipeline(cfg)
    stats = report.condition("test")
    click.echo(
        f"test PCC {stats.pcc_mean:.4f} over n={stats.n}; artifacts in {run_dir}",
        err=True,
    )
    click.echo(run_dir)


@main.command()
@click.option("--sizes", default="64x256,256x1024,1024x4096", show_default=True,
              help="Comma-separated n_inxn_out pairs.")
@click.option("--iterations", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_domain_errors
def bench(sizes, iterations, seed):
    """Measure forward-encryption latency (median and p95 per size)."""
    if iterations < 1:
        raise click.UsageError("--iterations must be >= 1")
    click.echo("n_in,n_out,iterations,median_ms,p95_ms")
    for token in sizes.split(","):
        n_in_s, n_out_s = token.lower().split("x")
        n_in, n_out = int(n_in_s), int(n_out_s)
        key = generate_key(seed, n_in, n_out)
        rng = make_generator(seed, 1)
        side = int(np.sqrt(n_in))
        if side * side != n_in:
            raise ValueError(f"bench size n_in={n_in} must be a perfect square")
        images = [
            PlainImage(pixels=rng.uniform(0.0, 1.0, size=(side, side)))
            for _ in range(8)
        ]
        shape = (1, n_out)  # bench accepts non-square n_out
        times = np.empty(iterations)
        for i in range(iterations):
            t0 = time.perf_counter()
            encrypt_op(key, images[i % len(images)], shape)
            times[i] = time.perf_counter() - t0
        click.echo(
            f"{n_in},{n_out},{iterations},"
            f"{np.median(times) * 1e3:.4f},{np.percentile(times, 95) * 1e3:.4f}"
        )


if __name__ == "__main__":
    sys.exit(main())
