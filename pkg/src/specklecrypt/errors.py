"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments (dimension mismatches,
out-of-range parameters); the classes below mark failures that callers may
want to handle differently from bad input.
"""


class SpeckleCryptError(Exception):
    """Base class for domain-specific failures."""


class UndefinedMetricError(SpeckleCryptError):
    """A similarity metric has no value for these inputs (e.g. PCC of a
    constant image, PSNR at zero MSE)."""


class FormatError(SpeckleCryptError):
    """A binary file does not conform to its declared format or version."""


class NumericalError(SpeckleCryptError):
    """A numerical procedure failed (ill-conditioned solve, non-finite loss)."""
