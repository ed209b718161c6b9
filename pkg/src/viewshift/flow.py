"""Desk-scale flow-matching inpainter with a block-mean latent codec.

The denoiser is a two-layer tanh MLP over the flattened concatenation
(z_t | condition latent | time embedding); gradients are analytic and
checked against central differences in the tests.  All randomness comes
from counter-based Philox streams keyed by (seed, draw index):

* key (seed, 0): model initialization, and the initial noise in `sample`;
* key (seed, 1 + d): gradient draw d — one uniform t, then the Gaussian
  noise latent z1 (d counts across steps and batch slots);
* key (seed, 2^63 + d): probe draw d, a frozen evaluation batch.

Each step applies one fixed-rate gradient descent update on a fresh
batch of draws; the recorded loss trace is always measured on the
frozen probe batch, so the trace depends only on (seed, parameters) —
with a zero learning rate it is exactly constant, and two runs with one
seed match bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, TrainingDivergedError
from .geometry import ImageBuffer, round_half_up

CHECKPOINT_MAGIC = b"VSFL"
CHECKPOINT_VERSION = 1
INPUT_LAYOUT = "zt|cond|temb"  # concatenation order fed to the first layer


def toy_encode(image: ImageBuffer, factor: int) -> np.ndarray:
    """Per-channel block mean over factor x factor blocks, scaled to [-1, 1]."""
    if factor < 1:
        raise InvalidInputError(f"factor must be >= 1, got {factor}")
    h, w = image.height, image.width
    if h % factor or w % factor:
        raise InvalidInputError(f"image {w}x{h} not divisible by factor {factor}")
    blocks = image.pixels.reshape(h // factor, factor, w // factor, factor, 3).astype(np.float64)
    mean = blocks.mean(axis=(1, 3))
    return 2.0 * mean / 255.0 - 1.0


def toy_decode(latent: np.ndarray, factor: int) -> ImageBuffer:
    """Nearest-neighbor upsample back to 8-bit RGB (round half up, clamped)."""
    lat = np.asarray(latent, dtype=np.float64)
    if lat.ndim != 3 or lat.shape[2] != 3:
        raise InvalidInputError(f"latent must be (H, W, 3), got {lat.shape}")
    vals = (lat + 1.0) * 255.0 / 2.0
    vals = np.clip(round_half_up(vals), 0, 255).astype(np.uint8)
    up = np.repeat(np.repeat(vals, factor, axis=0), factor, axis=1)
    return ImageBuffer(up)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio between two 8-bit images, in dB."""
    if a.pixels.shape != b.pixels.shape:
        raise InvalidInputError("images must share dimensions")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 * 255.0 / mse)


def fm_interpolate(z0: np.ndarray, z1: np.ndarray, t: float) -> np.ndarray:
    """Linear path z_t = (1 - t) z0 + t z1; endpoints are pinned exactly."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise InvalidInputError(f"shape mismatch {z0.shape} vs {z1.shape}")
    if t == 0.0:
        return z0.copy()
    if t == 1.0:
        return z1.copy()
    return (1.0 - t) * z0 + t * z1


def fm_target(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """Constant path velocity z1 - z0 (the regression target)."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise InvalidInputError(f"shape mismatch {z0.shape} vs {z1.shape}")
    return z1 - z0


def fm_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def time_embedding(t: float, size: int) -> np.ndarray:
    """Sinusoidal features of t with geometrically spaced frequencies 1..1e4."""
    if size < 2 or size % 2:
        raise InvalidInputError(f"embedding size must be even and >= 2, got {size}")
    half = size // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = 10000.0 ** (np.arange(half) / (half - 1))
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    steps: int = 2000
    batch_size: int = 32  # frozen (t, noise) draws per dataset sample
    seed: int = 0
    time_embed_size: int = 8
    downscale_factor: int = 4
    hidden_size: int = 64

    def __post_init__(self):
        # learning_rate 0 is allowed: it must leave parameters untouched.
        if self.learning_rate < 0:
            raise InvalidInputError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.downscale_factor not in (1, 2, 4):
            raise InvalidInputError(f"downscale factor must be 1, 2 or 4, got {self.downscale_factor}")
        if self.steps < 1 or self.batch_size < 1 or self.hidden_size < 1:
            raise InvalidInputError("steps, batch_size and hidden_size must be >= 1")
        if self.time_embed_size < 2 or self.time_embed_size % 2:
            raise InvalidInputError(f"time_embed_size must be even and >= 2, got {self.time_embed_size}")


@dataclass
class ToyDenoiser:
    """Affine -> tanh -> affine velocity model on flattened latents."""

    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out_dim, hidden)
    b2: np.ndarray  # (out_dim,)
    latent_shape: tuple[int, int, int]
    time_embed_size: int
    downscale_factor: int
    seed: int

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(cls, latent_shape: tuple[int, int, int], config: TrainConfig) -> "ToyDenoiser":
        # Output layer starts at zero: the first prediction is the batch
        # mean velocity, which keeps early steps stable at high rates.
        lat = int(np.prod(latent_shape))
        in_dim = 2 * lat + config.time_embed_size
        g = np.random.Generator(np.random.Philox(key=[config.seed & (2**64 - 1), 0]))
        w1 = g.standard_normal((config.hidden_size, in_dim)) / math.sqrt(in_dim)
        b1 = np.zeros(config.hidden_size)
        w2 = np.zeros((lat, config.hidden_size))
        b2 = np.zeros(lat)
        return cls(w1, b1, w2, b2, tuple(latent_shape), config.time_embed_size, config.downscale_factor, config.seed)

    def param_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class Grads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


def _input_row(model: ToyDenoiser, z_t: np.ndarray, t: float, c: np.ndarray) -> np.ndarray:
    for name, arr in (("z_t", z_t), ("condition latent", c)):
        if tuple(arr.shape) != tuple(model.latent_shape):
            raise InvalidInputError(f"{name} shape {arr.shape} does not match model latent {model.latent_shape}")
    return np.concatenate([np.ravel(z_t), np.ravel(c), time_embedding(t, model.time_embed_size)])


def _forward_batch(model: ToyDenoiser, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(x @ model.w1.T + model.b1)
    return hidden @ model.w2.T + model.b2, hidden


def denoiser_forward(model: ToyDenoiser, z_t: np.ndarray, t: float, c: np.ndarray) -> np.ndarray:
    """Predicted velocity for one latent; deterministic."""
    x = _input_row(model, np.asarray(z_t, dtype=np.float64), t, np.asarray(c, dtype=np.float64))
    y, _ = _forward_batch(model, x[None, :])
    return y[0].reshape(model.latent_shape)


def _backward_batch(model: ToyDenoiser, x: np.ndarray, targets: np.ndarray) -> tuple[Grads, float]:
    """Analytic gradients of the mean-over-everything squared error."""
    y, hidden = _forward_batch(model, x)
    diff = y - targets
    loss = float(np.mean(diff * diff))
    dy = (2.0 / diff.size) * diff
    gw2 = dy.T @ hidden
    gb2 = dy.sum(axis=0)
    dh = (dy @ model.w2) * (1.0 - hidden * hidden)
    gw1 = dh.T @ x
    gb1 = dh.sum(axis=0)
    return Grads(gw1, gb1, gw2, gb2), loss


def denoiser_backward(
    model: ToyDenoiser, z_t: np.ndarray, t: float, c: np.ndarray, target: np.ndarray
) -> Grads:
    """Gradients of fm_loss(denoiser_forward(...), target) w.r.t. every parameter."""
    x = _input_row(model, np.asarray(z_t, dtype=np.float64), t, np.asarray(c, dtype=np.float64))
    tgt = np.asarray(target, dtype=np.float64)
    if tuple(tgt.shape) != tuple(model.latent_shape):
        raise InvalidInputError(f"target shape {tgt.shape} does not match model latent {model.latent_shape}")
    grads, _ = _backward_batch(model, x[None, :], np.ravel(tgt)[None, :])
    return grads


_PROBE_STREAM = 2**63  # key offset separating probe draws from gradient draws


def _training_draw(seed: int, draw_index: int, latent_shape) -> tuple[float, np.ndarray]:
    g = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), draw_index]))
    t = float(g.random())
    z1 = g.standard_normal(latent_shape)
    return t, z1


def _draw_batch(model: ToyDenoiser, z0s, conds, seed: int, first_index: int, per_sample: int):
    """Rows and targets for `per_sample` draws of every sample, keyed from first_index."""
    rows = []
    targets = []
    d = first_index
    for z0, c in zip(z0s, conds):
        for _ in range(per_sample):
            t, z1 = _training_draw(seed, d, z0.shape)
            rows.append(_input_row(model, fm_interpolate(z0, z1, t), t, c))
            targets.append(np.ravel(fm_target(z0, z1)))
            d += 1
    return np.stack(rows), np.stack(targets)


def train(samples, config: TrainConfig) -> tuple[ToyDenoiser, list[float]]:
    """Fit the toy denoiser to a ConditionSample stream.

    Every step draws a fresh batch (``batch_size`` (t, z1) draws per
    sample) and applies one fixed-rate gradient descent update with a
    fixed summation order.  The returned trace holds, for every step,
    the pre-update loss on a frozen probe batch drawn once from the
    seed, so the trace is a pure function of the parameter trajectory.
    """
    samples = list(samples)
    if not samples:
        raise InvalidInputError("training needs at least one sample")
    f = config.downscale_factor
    z0s = [toy_encode(s.raw, f) for s in samples]
    conds = [toy_encode(s.condition, f) for s in samples]
    latent_shape = z0s[0].shape
    for z in z0s[1:]:
        if z.shape != latent_shape:
            raise InvalidInputError("all samples must share image dimensions")
    model = ToyDenoiser.initialize(latent_shape, config)

    probe_x, probe_tgt = _draw_batch(model, z0s, conds, config.seed, _PROBE_STREAM, config.batch_size)

    losses: list[float] = []
    lr = config.learning_rate
    rows_per_step = len(samples) * config.batch_size
    for step in range(config.steps):
        probe_y, _ = _forward_batch(model, probe_x)
        losses.append(fm_loss(probe_y, probe_tgt))
        x, tgt = _draw_batch(model, z0s, conds, config.seed, 1 + step * rows_per_step, config.batch_size)
        grads, _ = _backward_batch(model, x, tgt)
        if lr != 0.0:
            model.w1 = model.w1 - lr * grads.w1
            model.b1 = model.b1 - lr * grads.b1
            model.w2 = model.w2 - lr * grads.w2
            model.b2 = model.b2 - lr * grads.b2
        for p in model.param_list():
            if not np.all(np.isfinite(p)):
                raise TrainingDivergedError(f"non-finite parameters after step {step}")
    return model, losses


def euler_integrate(predict, z_init: np.ndarray, steps: int, c: np.ndarray) -> np.ndarray:
    """Integrate z from t=1 to t=0 with z <- z - dt * predict(z, t, c).

    ``predict`` is any callable (z_t, t, c) -> velocity; pass a
    ToyDenoiser via functools.partial(denoiser_forward, model) or use
    :func:`sample` directly.
    """
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    z = np.asarray(z_init, dtype=np.float64).copy()
    dt = 1.0 / steps
    for k in range(steps):
        t = (steps - k) / steps
        z = z - dt * predict(z, t, c)
    return z


def sample(model: ToyDenoiser, condition: ImageBuffer, steps: int, seed: int) -> ImageBuffer:
    """Generate an image for a condition by Euler-integrating the model."""
    c = toy_encode(condition, model.downscale_factor)
    if tuple(c.shape) != tuple(model.latent_shape):
        raise InvalidInputError(f"condition latent {c.shape} does not match model latent {model.latent_shape}")
    g = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 0]))
    z = g.standard_normal(model.latent_shape)
    out = euler_integrate(lambda zt, t, cc: denoiser_forward(model, zt, t, cc), z, steps, c)
    return toy_decode(out, model.downscale_factor)


def save_checkpoint(model: ToyDenoiser, path: str | Path) -> None:
    """Versioned binary: magic, version, JSON config echo, float64 LE params."""
    header = {
        "latent_shape": list(model.latent_shape),
        "time_embed_size": model.time_embed_size,
        "downscale_factor": model.downscale_factor,
        "hidden_size": int(model.w1.shape[0]),
        "seed": model.seed,
        "input_layout": INPUT_LAYOUT,
        "param_order": ["w1", "b1", "w2", "b2"],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.param_list():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ToyDenoiser:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    version, blob_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12 : 12 + blob_len].decode())
        latent_shape = tuple(int(v) for v in header["latent_shape"])
        hidden = int(header["hidden_size"])
        embed = int(header["time_embed_size"])
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    lat = int(np.prod(latent_shape))
    in_dim = 2 * lat + embed
    shapes = [(hidden, in_dim), (hidden,), (lat, hidden), (lat,)]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    payload = data[12 + blob_len :]
    if len(payload) != need:
        raise FormatError(f"{path}: parameter payload is {len(payload)} bytes, expected {need}")
    params = []
    offset = 0
    for s in shapes:
        n = int(np.prod(s)) * 8
        params.append(np.frombuffer(payload[offset : offset + n], dtype="<f8").reshape(s).copy())
        offset += n
    return ToyDenoiser(
        params[0], params[1], params[2], params[3],
        latent_shape, embed, int(header["downscale_factor"]), int(header.get("seed", 0)),
    )


def write_loss_trace(path: str | Path, losses: list[float]) -> None:
    lines = ["step,loss"]
    lines.extend(f"{i},{loss!r}" for i, loss in enumerate(losses))
    Path(path).write_text("\n".join(lines) + "\n")
