"""Face embedding, threshold matching, and recognition metrics.

A deterministic seeded projection stands in for a pretrained face
encoder: images are area-downsampled, standardized, optionally extended
with finite-difference gradient features, and projected to 128
dimensions. The projection output is divided by sqrt(128) so that
Euclidean distances between unrelated faces land near sqrt(2) and the
customary matching thresholds (0.5 to 0.6) separate same-identity pairs
from different-identity pairs on the synthetic corpus. Absolute distances
are therefore comparable in scale, but not in meaning, to those of a real
pretrained encoder.

Two faces match when their embedding distance is less than or equal to
the threshold. Recognition counts follow the positive/negative sample
convention where the ground-truth label of a pair comes from the
original images' distance against the same threshold as the prediction.
"""

import json
from dataclasses import dataclass

import numpy as np

from .optics import PlainImage
from .rng import check_seed, make_generator

EMBEDDING_DIM = 128

DEFAULT_SWEEP_THRESHOLDS = (0.50, 0.52, 0.54, 0.56, 0.58, 0.60)


@dataclass(frozen=True, eq=False)
class FaceEmbedding:
    """A 128-dimensional feature vector."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding must have shape ({EMBEDDING_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class MatchConfig:
    """Distance threshold for declaring two faces the same person."""

    threshold: float = 0.6

    def __post_init__(self):
        if not (np.isfinite(self.threshold) and self.threshold > 0):
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class RecognitionReport:
    """Recall, precision, accuracy, and F1 at one threshold.

    Metrics with a zero denominator are None (serialized as null), never
    silently reported as 0.
    """

    threshold: float
    recall: float | None
    precision: float | None
    accuracy: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "recall": self.recall,
            "precision": self.precision,
            "accuracy": self.accuracy,
            "f1": self.f1,
        }


class EmbeddingModel:
    """Deterministic stand-in encoder: fixed seeded projection to 128-d."""

    def __init__(
        self,
        seed: int,
        downsample_size: int = 4,
        gradient_features: bool = True,
    ):
        if downsample_size < 2:
            raise ValueError(f"downsample size must be >= 2, got {downsample_size}")
        self.seed = check_seed(seed)
        self.downsample_size = int(downsample_size)
        self.gradient_features = bool(gradient_features)
        k = self.downsample_size
        self.feature_dim = k * k + (2 * k * (k - 1) if gradient_features else 0)
        rng = make_generator(self.seed)
        proj = rng.normal(size=(EMBEDDING_DIM, self.feature_dim))
        proj /= np.linalg.norm(proj, axis=1, keepdims=True)
        proj.setflags(write=False)
        self.projection = proj


def _area_downsample(pixels: np.ndarray, k: int) -> np.ndarray:
    """Average pixels into a k x k grid (rows/cols partitioned evenly)."""
    h, w = pixels.shape
    row_edges = np.linspace(0, h, k + 1).astype(int)
    col_edges = np.linspace(0, w, k + 1).astype(int)
    rows = np.add.reduceat(pixels, row_edges[:-1], axis=0)
    cells = np.add.reduceat(rows, col_edges[:-1], axis=1)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))
    return cells / counts


def embed(model: EmbeddingModel, image: PlainImage | np.ndarray) -> FaceEmbedding:
    """Embed an image (at least 8x8) into a 128-dimensional vector."""
    pixels = image.pixels if isinstance(image, PlainImage) else np.asarray(image, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] < 8 or pixels.shape[1] < 8:
        raise ValueError(f"image must be at least 8x8, got shape {pixels.shape}")
    f = _area_downsample(pixels, model.downsample_size)
    sd = f.std()
    f = (f - f.mean()) / sd if sd > 0 else np.zeros_like(f)
    features = [f.ravel()]
    if model.gradient_features:
        features.append(np.diff(f, axis=0).ravel())
        features.append(np.diff(f, axis=1).ravel())
    x = np.concatenate(features)
    return FaceEmbedding(vector=(model.projection @ x) / np.sqrt(EMBEDDING_DIM))


def distance(a: FaceEmbedding, b: FaceEmbedding) -> float:
    """Euclidean distance between two embeddings."""
    return float(np.linalg.norm(a.vector - b.vector))


def match(a: FaceEmbedding, b: FaceEmbedding, cfg: MatchConfig) -> bool:
    """True (Match) when distance(a, b) <= threshold, else False (Mismatch)."""
    return distance(a, b) <= cfg.threshold


def confusion_counts(original_pairs, decrypted_pairs, cfg: MatchConfig) -> ConfusionCounts:
    """Tally TP/FP/TN/FN over aligned pair lists.

    The ground-truth label of pair i comes from the original embeddings'
    distance against the threshold; the prediction from the decrypted
    embeddings' distance against the same threshold.
    """
    if len(original_pairs) != len(decrypted_pairs):
        raise ValueError(
            f"pair lists are misaligned: {len(original_pairs)} original vs "
            f"{len(decrypted_pairs)} decrypted"
        )
    tp = fp = tn = fn = 0
    for (oa, ob), (da, db) in zip(original_pairs, decrypted_pairs):
        positive = distance(oa, ob) <= cfg.threshold
        predicted = distance(da, db) <= cfg.threshold
        if positive and predicted:
            tp += 1
        elif positive:
            fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def report(counts: ConfusionCounts, threshold: float) -> RecognitionReport:
    """Recognition metrics from counts; zero denominators yield None."""

    def ratio(num: int, den: int) -> float | None:
        return num / den if den > 0 else None

    recall = ratio(counts.tp, counts.tp + counts.fn)
    precision = ratio(counts.tp, counts.tp + counts.fp)
    accuracy = ratio(counts.tp + counts.tn, counts.total)
    if recall is None or precision is None or (precision + recall) == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return RecognitionReport(
        threshold=threshold, recall=recall, precision=precision, accuracy=accuracy, f1=f1
    )


def threshold_sweep(
    original_pairs,
    decrypted_pairs,
    thresholds=DEFAULT_SWEEP_THRESHOLDS,
) -> list[RecognitionReport]:
    """One report per threshold; ground truth is recomputed per threshold.

    The same threshold defines both the positive/negative ground truth and
    the prediction, so sweep rows are not nested subsets of each other.
    """
    if not thresholds:
        raise ValueError("threshold sweep needs at least one threshold")
    return [
        report(confusion_counts(original_pairs, decrypted_pairs, MatchConfig(t)), t)
        for t in thresholds
    ]


def sweep_with_counts(
    original_pairs, decrypted_pairs, thresholds=DEFAULT_SWEEP_THRESHOLDS
) -> list[tuple[ConfusionCounts, RecognitionReport]]:
    """Threshold sweep keeping the counts next to each report."""
    rows = []
    for t in thresholds:
        counts = confusion_counts(original_pairs, decrypted_pairs, MatchConfig(t))
        rows.append((counts, report(counts, t)))
    return rows


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def sweep_to_csv(reports, path) -> None:
    """Write sweep rows as CSV (fractions, 6 decimal places; blank = undefined)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("threshold,recall,precision,accuracy,f1\n")
        for r in reports:
            fh.write(
                f"{r.threshold:.2f},{_fmt(r.recall)},{_fmt(r.precision)},"
                f"{_fmt(r.accuracy)},{_fmt(r.f1)}\n"
            )


def sweep_to_json(rows, path) -> None:
    """Write (counts, report) sweep rows as JSON, undefined metrics as null."""
    payload = [
        {
            **rep.to_dict(),
            "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
        }
        for c, rep in rows
    ]
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
