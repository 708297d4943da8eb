"""Image similarity criteria: PCC, MSE, PSNR, and global SSIM.

All statistics are population statistics (divide by N). SSIM here is the
single-window product of luminance, contrast, and structure terms over
the whole image, not the sliding-window variant of common toolkits, and
PSNR's peak value is the global maximum pixel over both images. Metrics
that have no value for an input (PCC of a constant image, PSNR at zero
MSE) raise ``UndefinedMetricError`` instead of propagating NaN.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class SsimConstants:
    """Small positive stabilizers for the three SSIM terms."""

    c1: float = 1e-5
    c2: float = 1e-5
    c3: float = 1e-5

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("SSIM constants must be positive")


DEFAULT_SSIM_CONSTANTS = SsimConstants()


@dataclass(frozen=True)
class MetricReport:
    """The four similarity criteria for one image pair.

    ``psnr`` is None when MSE is zero (identical images have no finite
    peak signal-to-noise ratio).
    """

    pcc: float
    mse: float
    psnr: float | None
    ssim: float

    def to_dict(self) -> dict:
        return {"pcc": self.pcc, "mse": self.mse, "psnr": self.psnr, "ssim": self.ssim}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y, dtype=np.float64)
    b = np.asarray(yhat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty images")
    return a, b


def is_constant(values) -> bool:
    """True when every element equals the first (std of a constant image can
    round to a subnormal instead of exactly zero)."""
    a = np.asarray(values)
    return bool(np.all(a == a.reshape(-1)[0]))


def pcc(y, yhat) -> float:
    """Pearson correlation coefficient between two images.

    Raises:
        UndefinedMetricError: if either image is constant (zero std).
    """
    a, b = _pair(y, yhat)
    if is_constant(a) or is_constant(b):
        raise UndefinedMetricError("PCC is undefined for a constant image")
    cov = ((a - a.mean()) * (b - b.mean())).mean()
    return float(cov / (a.std() * b.std()))


def mse(y, yhat) -> float:
    """Mean squared error between two images."""
    a, b = _pair(y, yhat)
    return float(((b - a) ** 2).mean())


def psnr(y, yhat) -> float:
    """Peak signal-to-noise ratio in dB, 20 log10(peak / sqrt(MSE)).

    The peak is the global maximum pixel value over both images.

    Raises:
        UndefinedMetricError: if MSE is zero.
    """
    a, b = _pair(y, yhat)
    err = mse(a, b)
    if err == 0.0:
        raise UndefinedMetricError("PSNR is undefined at zero MSE")
    peak = max(float(a.max()), float(b.max()))
    return float(20.0 * np.log10(peak / np.sqrt(err)))


def ssim(y, yhat, constants: SsimConstants = DEFAULT_SSIM_CONSTANTS) -> float:
    """Global structural similarity: luminance * contrast * structure."""
    a, b = _pair(y, yhat)
    mu_a, mu_b = a.mean(), b.mean()
    sd_a, sd_b = a.std(), b.std()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    lum = (2.0 * mu_a * mu_b + constants.c1) / (mu_a**2 + mu_b**2 + constants.c1)
    con = (2.0 * sd_a * sd_b + constants.c2) / (sd_a**2 + sd_b**2 + constants.c2)
    struct = (cov + constants.c3) / (sd_a * sd_b + constants.c3)
    return float(lum * con * struct)


def compute_report(
    y, yhat, constants: SsimConstants = DEFAULT_SSIM_CONSTANTS
) -> MetricReport:
    """All four criteria for one pair; PSNR becomes None when MSE is zero."""
    err = mse(y, yhat)
    return MetricReport(
        pcc=pcc(y, yhat),
        mse=err,
        psnr=None if err == 0.0 else psnr(y, yhat),
        ssim=ssim(y, yhat, constants),
    )
