"""End-to-end experiment suite: pipeline runs, noise and FOV sweeps, attacks.

Every run is a pure function of its configuration: all seeds are explicit
and the emitted report embeds the effective config plus a hash of it, so
a report can be reproduced exactly. Artifacts (key, corpus, speckles,
model, decrypted images, reports) are persisted under
``<output_dir>/<config_hash>/run_NNNN`` and reruns never overwrite an
earlier run directory.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import dataset as ds
from . import decoder as dec
from . import fileio
from . import metrics
from . import recognizer as rec
from .optics import (
    FovSpec,
    NoiseSpec,
    PhysicalKey,
    PlainImage,
    SpecklePattern,
    add_noise,
    crop_fov,
    encrypt_batch,
    generate_key,
)
from .rng import derive_seed

DEFAULT_NOISE_SD_LIST = (0.0, 0.1, 0.3, 0.5, 1.0)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusConfig:
    n_identities: int = 220
    samples_per_identity: int = 10
    image_size: int = 16
    seed: int = 101


@dataclass(frozen=True)
class SplitConfig:
    n_train: int = 2000
    n_eval: int = 100
    n_test: int = 100
    seed: int = 99

    def spec(self) -> ds.SplitSpec:
        return ds.SplitSpec(self.n_train, self.n_eval, self.n_test)


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 5
    conv_levels: int = 0
    base_channels: int = 8
    input_mode: str = "amplitude"


@dataclass(frozen=True)
class NoiseConfig:
    sd_list: tuple = DEFAULT_NOISE_SD_LIST
    seed: int = 42


@dataclass(frozen=True)
class RecognitionConfig:
    thresholds: tuple = rec.DEFAULT_SWEEP_THRESHOLDS
    embed_seed: int = 17
    downsample_size: int = 4
    gradient_features: bool = True

    def model(self) -> rec.EmbeddingModel:
        return rec.EmbeddingModel(
            self.embed_seed, self.downsample_size, self.gradient_features
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment; everything needed to rerun it."""

    key_seed: int = 7
    wrong_key_seed: int = 8
    speckle_shape: tuple = (32, 32)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: dec.TrainConfig = field(default_factory=lambda: dec.TrainConfig(seed=11))
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    fov: FovSpec | None = None
    recognition: RecognitionConfig = field(default_factory=RecognitionConfig)
    output_dir: str = "runs"

    def __post_init__(self):
        n_in = self.corpus.image_size**2
        n_out = self.speckle_shape[0] * self.speckle_shape[1]
        if n_in < 4 or n_out < n_in:
            raise ValueError(
                f"inconsistent sizes: {n_in} plaintext pixels vs {n_out} speckle pixels"
            )

    def fov_spec(self) -> FovSpec:
        """Configured crop window, defaulting to the top-left quadrant."""
        if self.fov is not None:
            return self.fov
        return FovSpec(0, 0, self.speckle_shape[0] // 2, self.speckle_shape[1] // 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speckle_shape"] = list(self.speckle_shape)
        d["noise"]["sd_list"] = list(self.noise.sd_list)
        d["recognition"]["thresholds"] = list(self.recognition.thresholds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)

        def build(klass, value):
            if value is None:
                return None
            allowed = {f.name for f in fields(klass)}
            unknown = set(value) - allowed
            if unknown:
                raise ValueError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
            converted = {
                k: tuple(v) if isinstance(v, list) else v for k, v in value.items()
            }
            return klass(**converted)

        nested = {
            "corpus": CorpusConfig,
            "split": SplitConfig,
            "train": dec.TrainConfig,
            "model": ModelConfig,
            "noise": NoiseConfig,
            "fov": FovSpec,
            "recognition": RecognitionConfig,
        }
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = build(nested[key], value)
            elif key == "speckle_shape":
                kwargs[key] = tuple(value)
            elif key in {"key_seed", "wrong_key_seed", "output_dir"}:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key: {key}")
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        """Hash of the semantic config (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir", None)
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("ascii")).hexdigest()[:12]

    def seeds(self) -> dict:
        return {
            "key": self.key_seed,
            "wrong_key": self.wrong_key_seed,
            "corpus": self.corpus.seed,
            "split": self.split.seed,
            "train": self.train.seed,
            "model": self.model.seed,
            "noise": self.noise.seed,
            "embed": self.recognition.embed_seed,
        }


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionStats:
    """Mean similarity metrics over one experimental condition."""

    label: str
    n: int
    pcc_mean: float
    pcc_std: float
    mse_mean: float
    ssim_mean: float
    psnr_mean: float | None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    config_hash: str
    seeds: dict
    conditions: list
    recognition: list = field(default_factory=list)
    own_distances: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "conditions": [c.to_dict() for c in self.conditions],
            "recognition": self.recognition,
            "own_distances": self.own_distances,
            "provenance": self.provenance,
            "wall_clock_s": self.wall_clock_s,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def condition(self, label: str) -> ConditionStats:
        for c in self.conditions:
            if c.label == label:
                return c
        raise KeyError(f"no condition labeled {label!r}")


def conditions_to_csv(conditions, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("label,n,pcc_mean,pcc_std,mse_mean,ssim_mean,psnr_mean\n")
        for c in conditions:
            psnr = "" if c.psnr_mean is None else repr(c.psnr_mean)
            fh.write(
                f"{c.label},{c.n},{c.pcc_mean!r},{c.pcc_std!r},"
                f"{c.mse_mean!r},{c.ssim_mean!r},{psnr}\n"
            )


def condition_stats(label: str, decoded: np.ndarray, targets: np.ndarray) -> ConditionStats:
    """Per-sample metric reports averaged into one condition row.

    PSNR values that are undefined (zero MSE pairs) are excluded from the
    PSNR mean; the mean is None if no pair defines it.
    """
    pccs, mses, ssims, psnrs = [], [], [], []
    for out, ref in zip(decoded, targets):
        rep = metrics.compute_report(ref, out)
        pccs.append(rep.pcc)
        mses.append(rep.mse)
        ssims.append(rep.ssim)
        if rep.psnr is not None:
            psnrs.append(rep.psnr)
    return ConditionStats(
        label=label,
        n=len(decoded),
        pcc_mean=float(np.mean(pccs)),
        pcc_std=float(np.std(pccs)),
        mse_mean=float(np.mean(mses)),
        ssim_mean=float(np.mean(ssims)),
        psnr_mean=float(np.mean(psnrs)) if psnrs else None,
    )


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


@dataclass
class ExperimentData:
    """Materialized inputs shared by the experiment operations."""

    config: ExperimentConfig
    corpus: ds.Corpus
    key: PhysicalKey
    plain: dict      # split name -> (n, s, s) plaintext stack
    speckle: dict    # split name -> (n, h, w) clean speckle stack
    raw_scale: dict  # split name -> (n,) pre-normalization peak intensities
    identity: dict   # split name -> (n,) identity ids


def prepare_experiment(cfg: ExperimentConfig) -> ExperimentData:
    """Build corpus, split it, and encrypt every sample under the key."""
    corpus = ds.build_corpus(
        cfg.corpus.n_identities,
        cfg.corpus.samples_per_identity,
        cfg.corpus.image_size,
        cfg.corpus.seed,
    )
    parts = ds.split(corpus, cfg.split.spec(), cfg.split.seed)
    key = generate_key(cfg.key_seed, cfg.corpus.image_size**2,
                       cfg.speckle_shape[0] * cfg.speckle_shape[1])
    plain, speckle, raw_scale, identity = {}, {}, {}, {}
    for name, samples in (("train", parts.train), ("eval", parts.eval), ("test", parts.test)):
        images = np.stack([s.image.pixels for s in samples])
        patterns, scales = encrypt_batch(key, images, cfg.speckle_shape)
        plain[name] = images
        speckle[name] = patterns
        raw_scale[name] = scales
        identity[name] = np.array([s.identity_id for s in samples])
    return ExperimentData(cfg, corpus, key, plain, speckle, raw_scale, identity)


def train_decoder(
    data: ExperimentData, speckle_shape: tuple[int, int] | None = None, crop: FovSpec | None = None
) -> tuple[dec.DecoderModel, dec.TrainHistory]:
    """Train a decoder on the prepared data, optionally on a cropped FOV."""
    cfg = data.config
    spk = {k: v for k, v in data.speckle.items()}
    if crop is not None:
        r0, c0 = crop.origin_row, crop.origin_col
        spk = {
            k: v[:, r0 : r0 + crop.crop_height, c0 : c0 + crop.crop_width]
            for k, v in spk.items()
        }
    shape = speckle_shape or spk["train"].shape[1:]
    model = dec.build_decoder(
        shape,
        (cfg.corpus.image_size, cfg.corpus.image_size),
        seed=cfg.model.seed,
        conv_levels=cfg.model.conv_levels,
        base_channels=cfg.model.base_channels,
        input_mode=cfg.model.input_mode,
    )
    return dec.train(
        model,
        (spk["train"], data.plain["train"]),
        (spk["eval"], data.plain["eval"]),
        cfg.train,
    )


def evaluate_recognition(
    original_images: np.ndarray,
    decrypted_images: np.ndarray,
    embed_model: rec.EmbeddingModel,
    thresholds,
) -> tuple[list, list]:
    """Threshold sweep over all unordered test pairs, plus own-distances.

    Ground truth for pair (i, j) comes from the original images; the
    prediction from the decrypted images of the same indices. The
    decrypted-vs-own-original distance of every sample is returned
    alongside (the per-image match evidence).
    """
    orig = [rec.embed(embed_model, img) for img in original_images]
    decr = [rec.embed(embed_model, img) for img in decrypted_images]
    n = len(orig)
    original_pairs = [(orig[i], orig[j]) for i in range(n) for j in range(i + 1, n)]
    decrypted_pairs = [(decr[i], decr[j]) for i in range(n) for j in range(i + 1, n)]
    rows = [
        {**rep.to_dict(), "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}}
        for c, rep in rec.sweep_with_counts(original_pairs, decrypted_pairs, thresholds)
    ]
    own = [rec.distance(a, b) for a, b in zip(orig, decr)]
    return rows, own


# ---------------------------------------------------------------------------
# experiment operations
# ---------------------------------------------------------------------------


def run_pipeline(
    cfg: ExperimentConfig, persist: bool = True
) -> tuple[ExperimentReport, str | None]:
    """Corpus -> encrypt -> train -> decrypt test -> metrics -> recognition.

    Returns the report and the run directory (None when persist=False).
    Reruns with the same config write to a fresh run directory under the
    same config hash and produce byte-identical artifacts apart from the
    report's wall-clock field.
    """
    started = time.perf_counter()
    data = prepare_experiment(cfg)
    model, history = train_decoder(data)
    decoded = model.decode_batch(data.speckle["test"])
    stats = condition_stats("test", decoded, data.plain["test"])
    recognition, own = evaluate_recognition(
        data.plain["test"], decoded, cfg.recognition.model(), cfg.recognition.thresholds
    )
    report = ExperimentReport(
        config_hash=cfg.config_hash(),
        seeds=cfg.seeds(),
        conditions=[stats],
        recognition=recognition,
        own_distances=own,
        provenance={
            "config": cfg.to_dict(),
            "key_fingerprint": data.key.fingerprint,
            "final_eval_pcc": history.eval_pcc[-1],
        },
    )
    report.wall_clock_s = time.perf_counter() - started
    run_dir = _persist_run(cfg, data, model, history, decoded, report) if persist else None
    return report, run_dir


def _persist_run(cfg, data, model, history, decoded, report) -> str:
    base = os.path.join(cfg.output_dir, cfg.config_hash())
    os.makedirs(base, exist_ok=True)
    k = 1
    while True:
        run_dir = os.path.join(base, f"run_{k:04d}")
        try:
            os.makedirs(run_dir)
            break
        except FileExistsError:
            k += 1
    with open(os.path.join(run_dir, "config.json"), "w", encoding="ascii") as fh:
        json.dump(cfg.to_dict(), fh, indent=1)
        fh.write("\n")
    fileio.save_key(data.key, os.path.join(run_dir, "key.spky"))
    ds.write_corpus(data.corpus, os.path.join(run_dir, "corpus"))
    spk_dir = os.path.join(run_dir, "speckles")
    os.makedirs(spk_dir)
    for split_name in ("train", "eval", "test"):
        for i, (pattern, scale) in enumerate(
            zip(data.speckle[split_name], data.raw_scale[split_name])
        ):
            sp = SpecklePattern(
                pixels=pattern, raw_scale=float(scale), key_fingerprint=data.key.fingerprint
            )
            fileio.save_speckle(sp, os.path.join(spk_dir, f"{split_name}_{i:05d}.spim"))
    dec.save_model(model, os.path.join(run_dir, "model.spmd"))
    history.to_csv(os.path.join(run_dir, "history.csv"))
    dec_dir = os.path.join(run_dir, "decrypted")
    os.makedirs(dec_dir)
    for i, img in enumerate(decoded):
        fileio.save_plain_spim(PlainImage(pixels=img), os.path.join(dec_dir, f"test_{i:05d}.spim"))
    report.save(os.path.join(run_dir, "report.json"))
    conditions_to_csv(report.conditions, os.path.join(run_dir, "conditions.csv"))
    reports = [
        rec.RecognitionReport(
            threshold=r["threshold"], recall=r["recall"], precision=r["precision"],
            accuracy=r["accuracy"], f1=r["f1"],
        )
        for r in report.recognition
    ]
    rec.sweep_to_csv(reports, os.path.join(run_dir, "recognition.csv"))
    return run_dir


def noise_sweep(
    model: dec.DecoderModel,
    test_speckles: np.ndarray,
    test_plains: np.ndarray,
    key: PhysicalKey,
    sd_list=DEFAULT_NOISE_SD_LIST,
    seed: int = 42,
    threads: int | None = None,
) -> ExperimentReport:
    """Decode noisy copies of the clean test speckles at each noise level.

    Every condition shares the identical test set and decoder; only the
    seeded noise perturbation varies. The SD 0 row is the clean evaluation.
    """
    started = time.perf_counter()

    def run_condition(item):
        idx, sd = item
        if sd == 0.0:
            noisy = test_speckles
        else:
            spec_seed = derive_seed(seed, idx)
            stack = []
            for i, pattern in enumerate(test_speckles):
                sp = SpecklePattern(pixels=pattern, raw_scale=1.0, key_fingerprint=key.fingerprint)
                noise = NoiseSpec(sd_fraction=sd, seed=derive_seed(spec_seed, i))
                stack.append(add_noise(sp, noise).pixels)
            noisy = np.stack(stack)
        return condition_stats(f"sd_{sd:g}", model.decode_batch(noisy), test_plains)

    items = list(enumerate(sd_list))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            conditions = list(pool.map(run_condition, items))
    else:
        conditions = [run_condition(it) for it in items]
    return ExperimentReport(
        config_hash="",
        seeds={"noise": seed},
        conditions=conditions,
        provenance={"key_fingerprint": key.fingerprint, "sd_list": list(sd_list)},
        wall_clock_s=time.perf_counter() - started,
    )


def fov_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Train decoders on the full and the cropped field of view, paired.

    The plaintext resolution stays fixed; only the decoder input shrinks
    to the crop window (default: top-left quadrant), applied consistently
    to the train, eval, and test speckles.
    """
    started = time.perf_counter()
    data = prepare_experiment(cfg)
    crop = cfg.fov_spec()
    full_model, _ = train_decoder(data)
    quarter_model, _ = train_decoder(data, crop=crop)
    decoded_full = full_model.decode_batch(data.speckle["test"])
    r0, c0 = crop.origin_row, crop.origin_col
    cropped_test = data.speckle["test"][
        :, r0 : r0 + crop.crop_height, c0 : c0 + crop.crop_width
    ]
    decoded_quarter = quarter_model.decode_batch(cropped_test)
    conditions = [
        condition_stats("full_fov", decoded_full, data.plain["test"]),
        condition_stats("partial_fov", decoded_quarter, data.plain["test"]),
    ]
    return ExperimentReport(
        config_hash=cfg.config_hash(),
        seeds=cfg.seeds(),
        conditions=conditions,
        provenance={
            "crop": asdict(crop),
            "key_fingerprint": data.key.fingerprint,
        },
        wall_clock_s=time.perf_counter() - started,
    )


def wrong_key_attack(
    model: dec.DecoderModel,
    key_a: PhysicalKey,
    key_b: PhysicalKey,
    test_plains: np.ndarray,
    speckle_shape: tuple[int, int],
) -> ExperimentReport:
    """Decode ciphertexts produced under a different physical key.

    The same plaintexts are encrypted under both keys; the decoder was
    trained on key A. Both key fingerprints are recorded for audit.
    """
    started = time.perf_counter()
    if (key_a.n_in, key_a.n_out) != (key_b.n_in, key_b.n_out):
        raise ValueError(
            f"key dimensions differ: ({key_a.n_in}, {key_a.n_out}) vs "
            f"({key_b.n_in}, {key_b.n_out})"
        )
    same, _ = encrypt_batch(key_a, test_plains, speckle_shape)
    wrong, _ = encrypt_batch(key_b, test_plains, speckle_shape)
    conditions = [
        condition_stats("same_key", model.decode_batch(same), test_plains),
        condition_stats("wrong_key", model.decode_batch(wrong), test_plains),
    ]
    return ExperimentReport(
        config_hash="",
        seeds={"key_a": key_a.seed, "key_b": key_b.seed},
        conditions=conditions,
        provenance={
            "key_a_fingerprint": key_a.fingerprint,
            "key_b_fingerprint": key_b.fingerprint,
        },
        wall_clock_s=time.perf_counter() - started,
    )
