"""The learned digital key: a trainable decryption network.

The decoder maps a speckle intensity pattern back to the plaintext
estimate. The default desk-scale model is a complex fully connected
layer followed by a modulus and a logistic output squash; an optional
convolutional encoder-decoder refinement (with max-pool downsampling,
nearest-neighbor upsampling, and skip concatenation) can be placed in
front of it. Training is plain stochastic gradient descent on the loss

    loss(yhat, y) = MSE(yhat, y) - PCC(yhat, y)

with a cosine-annealed learning rate. All backpropagation is written by
hand; complex parameters are treated as independent (real, imaginary)
pairs, which is equivalent to Wirtinger calculus here and directly
checkable against finite differences (``grad_check``).

Skip-connection convention: each ``Downsample`` pushes its input onto a
stack and each ``Upsample`` pops the most recent entry and concatenates
it after the upsampled channels, so a flat layer list expresses the
U-shaped topology.

Model file format (SPMD, little-endian):

    magic "SPMD" | version u16 | input_mode u8 (0 intensity, 1 amplitude)
    | reserved u8 | speckle h,w u32 | image h,w u32 | layer count u16
    | per layer: tag u8 + payload

    tag 1 ComplexDense: n_out u32, n_in u32, weights f64 (re, im
          interleaved, row-major, n_out*n_in entries), bias f64 (re, im,
          n_out entries)
    tag 2 Modulus: no payload
    tag 3 ConvBlock: c_out u32, c_in u32, ksize u8, kernels f64
          (c_out*c_in*k*k row-major), bias f64 (c_out)
    tag 4 Downsample, tag 5 Upsample, tag 6 OutputSquash: no payload
"""

import copy
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericalError
from .metrics import is_constant, pcc as metric_pcc
from .optics import PhysicalKey, PlainImage, SpecklePattern
from .rng import check_seed, make_generator

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"SPMD"
MODEL_VERSION = 1

INPUT_MODES = ("intensity", "amplitude")

# sub-stream ids under TrainConfig.seed
_STREAM_SHUFFLE = 0


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class ComplexDense:
    """Fully connected layer over complex numbers: u = W x + b.

    Real input is lifted to complex with zero imaginary part by the model
    before this layer. Gradients are exchanged in complex form, where the
    real and imaginary parts carry d(loss)/d(re) and d(loss)/d(im).
    """

    tag = 1
    name = "complex_dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.complex128)
        bias = np.asarray(bias, dtype=np.complex128)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ValueError(
                f"inconsistent dense shapes: weight {weight.shape}, bias {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def initialized(cls, n_out: int, n_in: int, rng: np.random.Generator):
        # complex Gaussian, total variance 1/fan_in per entry
        sd = np.sqrt(1.0 / (2.0 * n_in))
        w = rng.normal(0.0, sd, (n_out, n_in)) + 1j * rng.normal(0.0, sd, (n_out, n_in))
        return cls(w, np.zeros(n_out, dtype=np.complex128))

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.weight, self.bias = params

    def forward(self, x: np.ndarray):
        return x @ self.weight.T + self.bias, x

    def backward(self, cache, grad_out):
        x = cache
        grad_w = grad_out.T @ np.conj(x)
        grad_b = grad_out.sum(axis=0)
        grad_x = grad_out @ np.conj(self.weight)
        return grad_x, [grad_w, grad_b]


class Modulus:
    """Elementwise complex magnitude; the complex-to-real transition."""

    tag = 2
    name = "modulus"
    params: list[np.ndarray] = []

    def set_params(self, params):
        pass

    def forward(self, x: np.ndarray):
        m = np.abs(x)
        return m, (x, m)

    def backward(self, cache, grad_out):
        x, m = cache
        # d|x|/dre = re/|x|, d|x|/dim = im/|x|; zero subgradient at the origin
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(m > 0.0, grad_out / m, 0.0)
        return scale * x, []


class ConvBlock:
    """3x3 same-padding convolution with bias and ReLU activation."""

    tag = 3
    name = "conv_block"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise ValueError(f"conv kernel must be (c_out, c_in, k, k), got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"conv bias shape {bias.shape} does not match {weight.shape}")
        self.weight = weight
        self.bias = bias

    @classmethod
    def initialized(cls, c_out: int, c_in: int, rng: np.random.Generator, ksize: int = 3):
        fan_in = c_in * ksize * ksize
        fan_out = c_out * ksize * ksize
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, (c_out, c_in, ksize, ksize))
        return cls(w, np.zeros(c_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def set_params(self, params):
        self.weight, self.bias = params

    def forward(self, x: np.ndarray):
        b, c_in, h, w = x.shape
        c_out, c_in_w, k, _ = self.weight.shape
        if c_in != c_in_w:
            raise ValueError(f"conv expects {c_in_w} input channels, got {c_in}")
        pad = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        z = np.tile(self.bias[None, :, None, None], (b, 1, h, w))
        for i in range(k):
            for j in range(k):
                z += np.einsum(
                    "bchw,oc->bohw", xp[:, :, i : i + h, j : j + w], self.weight[:, :, i, j]
                )
        mask = z > 0.0
        return z * mask, (xp, mask)

    def backward(self, cache, grad_out):
        xp, mask = cache
        gz = grad_out * mask
        b, c_out, h, w = gz.shape
        k = self.weight.shape[2]
        grad_w = np.empty_like(self.weight)
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                window = xp[:, :, i : i + h, j : j + w]
                grad_w[:, :, i, j] = np.einsum("bohw,bchw->oc", gz, window)
                grad_xp[:, :, i : i + h, j : j + w] += np.einsum(
                    "bohw,oc->bchw", gz, self.weight[:, :, i, j]
                )
        grad_b = gz.sum(axis=(0, 2, 3))
        pad = k // 2
        grad_x = grad_xp[:, :, pad : pad + h, pad : pad + w]
        return grad_x, [grad_w, grad_b]


class Downsample:
    """2x2 max-pool with stride 2. Its input also feeds the skip stack."""

    tag = 4
    name = "downsample"
    params: list[np.ndarray] = []

    def set_params(self, params):
        pass

    def forward(self, x: np.ndarray):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"max-pool needs even spatial dims, got {h}x{w}")
        windows = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = windows.reshape(b, c, h // 2, w // 2, 4)
        # first-maximum routing keeps gradient placement deterministic under ties
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return out, (idx, (b, c, h, w))

    def backward(self, cache, grad_out):
        idx, (b, c, h, w) = cache
        flat = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(flat, idx[..., None], grad_out[..., None], axis=-1)
        grad_x = (
            flat.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        return grad_x, []


class Upsample:
    """2x nearest-neighbor upsampling, concatenating the popped skip after it."""

    tag = 5
    name = "upsample"
    params: list[np.ndarray] = []

    def set_params(self, params):
        pass

    def forward(self, x: np.ndarray, skip: np.ndarray):
        up = x.repeat(2, axis=2).repeat(2, axis=3)
        if up.shape[2:] != skip.shape[2:]:
            raise ValueError(
                f"skip spatial shape {skip.shape[2:]} does not match upsample {up.shape[2:]}"
            )
        return np.concatenate([up, skip], axis=1), x.shape[1]

    def backward(self, cache, grad_out):
        c = cache
        g_up, g_skip = grad_out[:, :c], grad_out[:, c:]
        b, _, h2, w2 = g_up.shape
        grad_x = g_up.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return grad_x, g_skip


class OutputSquash:
    """Elementwise logistic squash keeping outputs strictly inside (0, 1)."""

    tag = 6
    name = "output_squash"
    params: list[np.ndarray] = []

    def set_params(self, params):
        pass

    def forward(self, x: np.ndarray):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    def backward(self, cache, grad_out):
        s = cache
        return grad_out * s * (1.0 - s), []


LAYER_TYPES = {cls.tag: cls for cls in (ComplexDense, Modulus, ConvBlock, Downsample, Upsample, OutputSquash)}


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class DecoderModel:
    """Ordered layer stack decoding speckle patterns into plaintext estimates."""

    def __init__(
        self,
        layers: list,
        speckle_shape: tuple[int, int],
        image_shape: tuple[int, int],
        input_mode: str = "amplitude",
    ):
        if input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {input_mode!r}")
        if not layers or not isinstance(layers[-1], OutputSquash):
            raise ValueError("decoder must end with an OutputSquash layer")
        self.layers = list(layers)
        self.speckle_shape = (int(speckle_shape[0]), int(speckle_shape[1]))
        self.image_shape = (int(image_shape[0]), int(image_shape[1]))
        self.input_mode = input_mode

    # -- bookkeeping --------------------------------------------------------

    def copy(self) -> "DecoderModel":
        return copy.deepcopy(self)

    @property
    def n_parameters(self) -> int:
        """Number of real trainable parameters (complex entries count twice)."""
        total = 0
        for layer in self.layers:
            for p in layer.params:
                total += p.size * (2 if np.iscomplexobj(p) else 1)
        return total

    def prepare_input(self, patterns: np.ndarray) -> np.ndarray:
        """Stack of speckle images -> network input per input_mode."""
        x = np.asarray(patterns, dtype=np.float64)
        if self.input_mode == "amplitude":
            x = np.sqrt(x)
        return x

    # -- forward / backward -------------------------------------------------

    def _forward_cached(self, x: np.ndarray):
        """Run prepared input of shape (batch, h, w); returns (output, caches).

        Adapter steps (channel axis insertion, flattening, complex lift) are
        recorded in the cache list alongside layer caches so the backward
        pass can mirror them exactly.
        """
        a = x
        caches = []
        skips = []
        for layer in self.layers:
            steps = []
            if isinstance(layer, (ConvBlock, Downsample, Upsample)) and a.ndim == 3:
                a = a[:, None, :, :]
                steps.append(("channel", None))
            if isinstance(layer, ComplexDense):
                if a.ndim > 2:
                    steps.append(("flatten", a.shape))
                    a = a.reshape(a.shape[0], -1)
                if not np.iscomplexobj(a):
                    steps.append(("lift", None))
                    a = a.astype(np.complex128)
            if isinstance(layer, Downsample):
                skips.append(a)
                a, cache = layer.forward(a)
            elif isinstance(layer, Upsample):
                if not skips:
                    raise ValueError("upsample without a matching downsample skip")
                a, cache = layer.forward(a, skips.pop())
            else:
                a, cache = layer.forward(a)
            caches.append((steps, cache))
        out = a.reshape(a.shape[0], *self.image_shape)
        return out, caches

    def _backward(self, caches, grad_out: np.ndarray):
        """Gradient of the scalar loss w.r.t. every parameter.

        Returns a list aligned with ``self.layers`` of per-layer parameter
        gradient lists. ``grad_out`` has the output's (batch, h, w) shape.
        """
        g = grad_out.reshape(grad_out.shape[0], -1)
        param_grads: list[list[np.ndarray]] = [[] for _ in self.layers]
        skip_grads: list[np.ndarray] = []
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            steps, cache = caches[li]
            if isinstance(layer, Upsample):
                g, g_skip = layer.backward(cache, g)
                skip_grads.append(g_skip)
            elif isinstance(layer, Downsample):
                g, _ = layer.backward(cache, g)
                if not skip_grads:
                    raise ValueError("downsample without a matching upsample gradient")
                g = g + skip_grads.pop()
            else:
                g, grads = layer.backward(cache, g)
                param_grads[li] = grads
            for kind, info in reversed(steps):
                if kind == "lift":
                    g = g.real.copy()
                elif kind == "flatten":
                    g = g.reshape(info)
                elif kind == "channel":
                    g = g[:, 0, :, :]
        return param_grads

    def decode_batch(self, patterns: np.ndarray) -> np.ndarray:
        """Decode a stack of speckle images (n, h, w) -> (n, ih, iw). Pure."""
        x = np.asarray(patterns, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != self.speckle_shape:
            raise ValueError(
                f"speckle batch shape {x.shape[1:]} does not match model input "
                f"{self.speckle_shape}"
            )
        out, _ = self._forward_cached(self.prepare_input(x))
        return out


def build_decoder(
    speckle_shape: tuple[int, int],
    image_shape: tuple[int, int],
    seed: int,
    conv_levels: int = 0,
    base_channels: int = 8,
    input_mode: str = "amplitude",
) -> DecoderModel:
    """Construct a decoder with seeded initialization.

    ``conv_levels`` = 0 gives the default desk-scale model (complex dense,
    modulus, squash); >= 1 prepends a conv encoder-decoder of that depth
    whose output feeds the dense layer.
    """
    rng = make_generator(check_seed(seed))
    sh, sw = int(speckle_shape[0]), int(speckle_shape[1])
    ih, iw = int(image_shape[0]), int(image_shape[1])
    layers: list = []
    if conv_levels > 0:
        if sh % (2**conv_levels) or sw % (2**conv_levels):
            raise ValueError(
                f"speckle shape {sh}x{sw} is not divisible by 2^{conv_levels}"
            )
        channels = [base_channels * (2**i) for i in range(conv_levels + 1)]
        layers.append(ConvBlock.initialized(channels[0], 1, rng))
        for lvl in range(conv_levels):
            layers.append(Downsample())
            layers.append(ConvBlock.initialized(channels[lvl + 1], channels[lvl], rng))
        for lvl in range(conv_levels - 1, -1, -1):
            layers.append(Upsample())
            concat = channels[lvl + 1] + channels[lvl]
            target = channels[lvl] if lvl > 0 else 1
            layers.append(ConvBlock.initialized(target, concat, rng))
    layers.append(ComplexDense.initialized(ih * iw, sh * sw, rng))
    layers.append(Modulus())
    layers.append(OutputSquash())
    return DecoderModel(layers, (sh, sw), (ih, iw), input_mode)


def forward(model: DecoderModel, speckle: SpecklePattern) -> PlainImage:
    """Decode one speckle pattern into a plaintext estimate in (0, 1)."""
    if (speckle.height, speckle.width) != model.speckle_shape:
        raise ValueError(
            f"speckle shape {speckle.height}x{speckle.width} does not match model "
            f"input {model.speckle_shape[0]}x{model.speckle_shape[1]}"
        )
    out = model.decode_batch(speckle.pixels[None])[0]
    return PlainImage(pixels=out)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def loss(yhat, y) -> float:
    """Training loss MSE(yhat, y) - PCC(yhat, y) for one image pair.

    A constant prediction has no defined PCC; the loss falls back to MSE
    alone for that sample (logged once per call site).
    """
    a = np.asarray(yhat, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    err = float(((a - b) ** 2).mean())
    if is_constant(a) or is_constant(b):
        logger.warning("constant image in loss; falling back to MSE alone")
        return err
    return err - metric_pcc(b, a)


def loss_gradient(yhat, y) -> np.ndarray:
    """Analytic d(MSE - PCC)/d(yhat), elementwise, population statistics."""
    a = np.asarray(yhat, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    n = a.size
    g_mse = 2.0 * (a - b) / n
    if is_constant(a) or is_constant(b):
        logger.warning("constant image in loss gradient; falling back to MSE alone")
        return g_mse
    da = a - a.mean()
    db = b - b.mean()
    sa = a.std()
    sb = b.std()
    rho = (da * db).mean() / (sa * sb)
    g_pcc = (db / (sa * sb) - rho * da / sa**2) / n
    return g_mse - g_pcc


def _batch_loss_grad(out: np.ndarray, target: np.ndarray):
    """Mean per-sample loss over a batch, its gradient, and per-sample PCC.

    The gradient corresponds to the batch-mean objective, i.e. each
    per-sample gradient is divided by the batch size.
    """
    bsz, n = out.shape[0], out[0].size
    o = out.reshape(bsz, -1)
    t = target.reshape(bsz, -1)
    mu_o = o.mean(axis=1, keepdims=True)
    mu_t = t.mean(axis=1, keepdims=True)
    do = o - mu_o
    dt = t - mu_t
    so = np.sqrt((do**2).mean(axis=1, keepdims=True))
    st = np.sqrt((dt**2).mean(axis=1, keepdims=True))
    sample_mse = ((o - t) ** 2).mean(axis=1, keepdims=True)
    g = 2.0 * (o - t) / n
    ok = ~(np.all(o == o[:, :1], axis=1, keepdims=True)
           | np.all(t == t[:, :1], axis=1, keepdims=True))
    if not np.all(ok):
        logger.warning("constant image in batch loss; falling back to MSE alone")
    safe_so = np.where(ok, so, 1.0)
    safe_st = np.where(ok, st, 1.0)
    rho = np.where(ok, (do * dt).mean(axis=1, keepdims=True) / (safe_so * safe_st), 0.0)
    g_pcc = (dt / (safe_so * safe_st) - rho * do / safe_so**2) / n
    g = g - np.where(ok, g_pcc, 0.0)
    sample_loss = sample_mse - rho
    return float(sample_loss.mean()), (g / bsz).reshape(out.shape), rho.ravel()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """SGD recipe: cosine-annealed learning rate over all optimizer steps."""

    learning_rate: float = 0.15
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        check_seed(self.seed)


@dataclass
class TrainHistory:
    """Per-epoch training curve."""

    train_loss: list[float] = field(default_factory=list)
    eval_loss: list[float] = field(default_factory=list)
    eval_pcc: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("epoch,train_loss,eval_loss,eval_pcc\n")
            for i, (tl, el, ep) in enumerate(
                zip(self.train_loss, self.eval_loss, self.eval_pcc), start=1
            ):
                fh.write(f"{i},{tl!r},{el!r},{ep!r}\n")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing lr(t) = 0.5 lr0 (1 + cos(pi t / T)) for step t of T."""
    return 0.5 * lr0 * (1.0 + np.cos(np.pi * step / total_steps))


def _stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a training set to (speckle stack, plaintext stack)."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        spk, img = pairs
    else:
        spk_list, img_list = [], []
        for s, p in pairs:
            spk_list.append(s.pixels if isinstance(s, SpecklePattern) else np.asarray(s))
            img_list.append(p.pixels if isinstance(p, PlainImage) else np.asarray(p))
        spk = np.stack(spk_list)
        img = np.stack(img_list)
    if len(spk) != len(img) or len(spk) == 0:
        raise ValueError("training set must be non-empty with aligned pairs")
    return np.asarray(spk, dtype=np.float64), np.asarray(img, dtype=np.float64)


def evaluate(model: DecoderModel, pairs) -> tuple[float, float]:
    """(mean loss, mean PCC) of the model over a set of pairs."""
    spk, img = _stack_pairs(pairs)
    out = model.decode_batch(spk)
    mean_loss, _, rho = _batch_loss_grad(out, img)
    return mean_loss, float(rho.mean())


def train(
    model: DecoderModel, train_set, eval_set, config: TrainConfig
) -> tuple[DecoderModel, TrainHistory]:
    """Train a copy of the model by plain SGD; fully deterministic in config.seed.

    Mini-batches are visited in seeded shuffled order; gradients within a
    batch are averaged in index order so results do not depend on any
    parallel execution of the batch.
    """
    spk, img = _stack_pairs(train_set)
    if spk.shape[1:] != model.speckle_shape or img.shape[1:] != model.image_shape:
        raise ValueError(
            f"training data shapes {spk.shape[1:]}/{img.shape[1:]} do not match "
            f"model {model.speckle_shape}/{model.image_shape}"
        )
    model = model.copy()
    x_all = model.prepare_input(spk)
    n = len(x_all)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    shuffle_rng = make_generator(config.seed, _STREAM_SHUFFLE)
    history = TrainHistory()
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size : (s + 1) * config.batch_size]
            out, caches = model._forward_cached(x_all[idx])
            batch_loss, grad_out, _ = _batch_loss_grad(out, img[idx])
            if not np.isfinite(batch_loss):
                raise NumericalError(
                    f"non-finite loss {batch_loss} at epoch {epoch} step {s}"
                )
            param_grads = model._backward(caches, grad_out)
            lr = cosine_lr(step, total_steps, config.learning_rate)
            for layer, grads in zip(model.layers, param_grads):
                for p, g in zip(layer.params, grads):
                    p -= lr * g
            epoch_loss += batch_loss * len(idx)
            step += 1
        eval_loss, eval_pcc = evaluate(model, eval_set)
        history.train_loss.append(epoch_loss / n)
        history.eval_loss.append(eval_loss)
        history.eval_pcc.append(eval_pcc)
    return model, history


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    model: DecoderModel,
    sample,
    n_params: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error of analytic parameter gradients vs central differences.

    Samples up to ``n_params`` real parameter coordinates per parameterized
    layer (complex parameters contribute a real and an imaginary coordinate
    each). Coordinates where both gradients are below 1e-8 in magnitude are
    compared absolutely, so dead units cannot inflate the relative error.
    """
    spk, img = sample
    spk = spk.pixels if isinstance(spk, SpecklePattern) else np.asarray(spk)
    img = img.pixels if isinstance(img, PlainImage) else np.asarray(img)
    x = model.prepare_input(spk[None].astype(np.float64))
    target = img[None].astype(np.float64)

    out, caches = model._forward_cached(x)
    _, grad_out, _ = _batch_loss_grad(out, target)
    analytic = model._backward(caches, grad_out)

    def loss_now() -> float:
        o, _ = model._forward_cached(x)
        val, _, _ = _batch_loss_grad(o, target)
        return val

    rng = make_generator(seed)
    worst = 0.0
    for li, layer in enumerate(model.layers):
        coords = []
        for pi, p in enumerate(layer.params):
            parts = (0, 1) if np.iscomplexobj(p) else (0,)
            for flat in range(p.size):
                for part in parts:
                    coords.append((pi, flat, part))
        if not coords:
            continue
        if len(coords) > n_params:
            chosen = rng.choice(len(coords), size=n_params, replace=False)
            coords = [coords[c] for c in chosen]
        for pi, flat, part in coords:
            p = layer.params[pi]
            view = p.reshape(-1)
            delta = step if part == 0 else step * 1j
            orig = view[flat]
            view[flat] = orig + delta
            f_plus = loss_now()
            view[flat] = orig - delta
            f_minus = loss_now()
            view[flat] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            ga = analytic[li][pi].reshape(-1)[flat]
            an = ga.real if part == 0 else ga.imag
            if abs(an) < 1e-8 and abs(fd) < 1e-8:
                err = abs(an - fd)
            else:
                err = abs(an - fd) / max(abs(an), abs(fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# exact pseudo-inverse oracle (field-detection mode)
# ---------------------------------------------------------------------------


def pinv_decode(
    key: PhysicalKey,
    fld: np.ndarray,
    image_shape: tuple[int, int] | None = None,
    ridge: float = 1e-9,
    condition_limit: float = 1e12,
) -> PlainImage:
    """Exact decoding from the complex field via regularized least squares.

    Solves (T^H T + ridge I) x = T^H y and recovers the plaintext as
    arg(x) / (2 pi) mod 1. Only meaningful in field-detection mode where
    the full complex field is available; intensity detection destroys the
    phase this relies on.

    Raises:
        NumericalError: if the normal-equations matrix has a condition
            estimate above ``condition_limit``.
    """
    fld = np.asarray(fld, dtype=np.complex128).ravel()
    if fld.size != key.n_out:
        raise ValueError(f"field length {fld.size} does not match n_out={key.n_out}")
    if key.n_out < key.n_in:
        raise ValueError(
            f"least-squares decoding needs n_out >= n_in, got {key.n_out} < {key.n_in}"
        )
    if image_shape is None:
        side = int(round(np.sqrt(key.n_in)))
        if side * side != key.n_in:
            raise ValueError(
                f"n_in={key.n_in} is not a perfect square; pass an explicit image shape"
            )
        image_shape = (side, side)
    if image_shape[0] * image_shape[1] != key.n_in:
        raise ValueError(
            f"image shape {image_shape} does not factor n_in={key.n_in}"
        )
    t = key.matrix
    normal = t.conj().T @ t + ridge * np.eye(key.n_in)
    eigvals = np.linalg.eigvalsh(normal)
    if eigvals[0] <= 0 or eigvals[-1] / eigvals[0] > condition_limit:
        raise NumericalError(
            f"normal equations condition estimate {eigvals[-1] / max(eigvals[0], 1e-300):.3e} "
            f"exceeds {condition_limit:.1e}"
        )
    x = np.linalg.solve(normal, t.conj().T @ fld)
    values = np.mod(np.angle(x) / (2.0 * np.pi), 1.0)
    return PlainImage(pixels=values.reshape(image_shape))


def align_phase(recovered: PlainImage, reference: PlainImage) -> PlainImage:
    """Resolve the global additive constant (mod 1) by anchoring pixel 0."""
    shift = (reference.flat()[0] - recovered.flat()[0]) % 1.0
    values = np.mod(recovered.pixels + shift, 1.0)
    return PlainImage(pixels=values)


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------


def _write_f64(fh, arr: np.ndarray) -> None:
    if np.iscomplexobj(arr):
        arr = np.ascontiguousarray(arr).astype("<c16")
    else:
        arr = np.ascontiguousarray(arr).astype("<f8")
    fh.write(arr.tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError("model file truncated")
    return data


def save_model(model: DecoderModel, path) -> None:
    """Serialize a decoder to the SPMD format (lossless f64 roundtrip)."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<HBBIIIIH",
                MODEL_VERSION,
                INPUT_MODES.index(model.input_mode),
                0,
                model.speckle_shape[0],
                model.speckle_shape[1],
                model.image_shape[0],
                model.image_shape[1],
                len(model.layers),
            )
        )
        for layer in model.layers:
            fh.write(struct.pack("<B", layer.tag))
            if isinstance(layer, ComplexDense):
                n_out, n_in = layer.weight.shape
                fh.write(struct.pack("<II", n_out, n_in))
                _write_f64(fh, layer.weight)
                _write_f64(fh, layer.bias)
            elif isinstance(layer, ConvBlock):
                c_out, c_in, k, _ = layer.weight.shape
                fh.write(struct.pack("<IIB", c_out, c_in, k))
                _write_f64(fh, layer.weight)
                _write_f64(fh, layer.bias)


def load_model(path) -> DecoderModel:
    """Load a decoder from an SPMD file.

    Raises:
        FormatError: on wrong magic, unsupported version, truncation, or
            trailing bytes.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MODEL_MAGIC:
            raise FormatError("not a decoder model file (bad magic)")
        (version, mode_idx, _reserved, sh, sw, ih, iw, n_layers) = struct.unpack(
            "<HBBIIIIH", _read_exact(fh, 22)
        )
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        if mode_idx >= len(INPUT_MODES):
            raise FormatError(f"unknown input mode {mode_idx}")
        layers = []
        for _ in range(n_layers):
            (tag,) = struct.unpack("<B", _read_exact(fh, 1))
            if tag == ComplexDense.tag:
                n_out, n_in = struct.unpack("<II", _read_exact(fh, 8))
                w = np.frombuffer(_read_exact(fh, 16 * n_out * n_in), dtype="<c16")
                b = np.frombuffer(_read_exact(fh, 16 * n_out), dtype="<c16")
                layers.append(ComplexDense(w.reshape(n_out, n_in).copy(), b.copy()))
            elif tag == ConvBlock.tag:
                c_out, c_in, k = struct.unpack("<IIB", _read_exact(fh, 9))
                w = np.frombuffer(_read_exact(fh, 8 * c_out * c_in * k * k), dtype="<f8")
                b = np.frombuffer(_read_exact(fh, 8 * c_out), dtype="<f8")
                layers.append(ConvBlock(w.reshape(c_out, c_in, k, k).copy(), b.copy()))
            elif tag in LAYER_TYPES:
                layers.append(LAYER_TYPES[tag]())
            else:
                raise FormatError(f"unknown layer tag {tag}")
        if fh.read(1):
            raise FormatError("trailing bytes after model payload")
    return DecoderModel(layers, (sh, sw), (ih, iw), INPUT_MODES[mode_idx])
