"""Speckle-based optical cryptosystem simulator.

Images are encrypted by phase-encoding them onto a coherent beam and
scattering it through a random medium (modeled by a complex transmission
matrix, the physical secret key); the recorded speckle intensity is the
ciphertext. A trainable decoder network (the learned digital key) inverts
the channel, and recognition metrics quantify whether decrypted faces
still match their originals.
"""

from .dataset import (
    Corpus,
    FaceSample,
    Identity,
    SplitSpec,
    build_corpus,
    load_corpus_images,
    render_face,
    split,
    write_corpus,
)
from .decoder import (
    DecoderModel,
    TrainConfig,
    TrainHistory,
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
from .errors import (
    FormatError,
    NumericalError,
    SpeckleCryptError,
    UndefinedMetricError,
)
from .fileio import (
    load_image_pgm,
    load_key,
    load_plain_spim,
    load_speckle,
    load_spim,
    save_image_pgm,
    save_key,
    save_plain_spim,
    save_speckle,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    fov_experiment,
    noise_sweep,
    prepare_experiment,
    run_pipeline,
    wrong_key_attack,
)
from .metrics import (
    MetricReport,
    SsimConstants,
    compute_report,
    mse,
    pcc,
    psnr,
    ssim,
)
from .optics import (
    FovSpec,
    NoiseSpec,
    PhysicalKey,
    PlainImage,
    SpecklePattern,
    add_noise,
    crop_fov,
    detect_field,
    encrypt,
    encrypt_batch,
    generate_key,
    key_length_bits,
    key_length_bits_from_dims,
)
from .recognizer import (
    ConfusionCounts,
    EmbeddingModel,
    FaceEmbedding,
    MatchConfig,
    RecognitionReport,
    confusion_counts,
    distance,
    embed,
    match,
    report,
    threshold_sweep,
)

__all__ = [name for name in dir() if not name.startswith("_")]
