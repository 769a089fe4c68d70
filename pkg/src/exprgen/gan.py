"""Convolutional generator/discriminator pair, adversarial SGD training and membership scoring.

Maps are ``(m, rows, cols, 1)`` arrays with gene ``g`` at row-major position
``(g // cols, g % cols)``. The discriminator ends in two sigmoid units: unit 0
is trained toward 1 on real maps (real-ness), unit 1 toward 1 on generated maps.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .errors import BatchSizeError, ConfigurationError, DimensionError, InputRangeError, NumericError, StateError
from .tensor import (
    Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, Reshape, Sequential, UpSample2D,
)

NOISE_DIM = 100
SCORE_CLAMP = 1e-7

# dataset -> (upsample factors, generator conv channels)
DATASET_DEFAULTS = {
    "breast": ((32, 3), (48, 32)),
    "prostate": ((10, 10), (50, 25)),
}
DISC_CHANNELS = (32, 64)
DISC_DENSE = 64


@dataclass(frozen=True)
class ArchitecturePlan:
    dataset: str
    gene_count: int
    map_shape: tuple[int, int]
    upsample: tuple[int, int]
    gen_channels: tuple[int, int]
    disc_channels: tuple[int, int] = DISC_CHANNELS
    disc_dense: int = DISC_DENSE
    noise_dim: int = NOISE_DIM
    dropout: float = 0.5

    @property
    def grid(self):
        return self.map_shape[0] // self.upsample[0], self.map_shape[1] // self.upsample[1]

    @property
    def base_channels(self):
        return self.upsample[0] * self.upsample[1]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("map_shape", "upsample", "gen_channels", "disc_channels"):
            d[key] = tuple(d[key])
        return cls(**d)


def factorize_map(gene_count, upsample):
    """Closest-to-square ``(rows, cols)`` with ``rows * cols == gene_count`` and each
    upsample factor dividing its axis; ties go to ``rows >= cols``."""
    fy, fx = upsample
    cells = fy * fx
    if gene_count <= 0 or gene_count % cells:
        lo = (gene_count // cells) * cells
        hint = f"{lo} or {lo + cells}" if lo > 0 else f"{cells}"
        raise ConfigurationError(
            f"gene count {gene_count} cannot be laid out as a map with upsample factors ({fy},{fx}): "
            f"it must be a multiple of {cells}; nearest valid counts are {hint}"
        )
    n = gene_count // cells
    best = None
    for a in range(1, n + 1):
        if n % a:
            continue
        rows, cols = a * fy, (n // a) * fx
        key = (abs(rows - cols), rows < cols)
        if best is None or key < best[0]:
            best = (key, (rows, cols))
    return best[1]


def plan_architecture(gene_count, dataset="breast", map_shape=None, upsample=None, gen_channels=None,
                      disc_channels=DISC_CHANNELS, disc_dense=DISC_DENSE, noise_dim=NOISE_DIM) -> ArchitecturePlan:
    """Resolve layer sizes for ``dataset``; explicit arguments override the dataset defaults.

    ``dataset="custom"`` requires ``upsample`` and ``gen_channels``; this is the
    reduced-architecture path used for desk-scale runs.
    """
    if dataset in DATASET_DEFAULTS:
        default_up, default_ch = DATASET_DEFAULTS[dataset]
        upsample = tuple(upsample or default_up)
        gen_channels = tuple(gen_channels or default_ch)
    elif dataset == "custom":
        if upsample is None or gen_channels is None:
            raise ConfigurationError("custom architecture needs explicit upsample factors and generator channels")
        upsample, gen_channels = tuple(upsample), tuple(gen_channels)
    else:
        raise ConfigurationError(f"unknown dataset tag {dataset!r}; expected breast, prostate or custom")
    if map_shape is None:
        map_shape = factorize_map(gene_count, upsample)
    else:
        map_shape = tuple(int(s) for s in map_shape)
        if map_shape[0] * map_shape[1] != gene_count or map_shape[0] % upsample[0] or map_shape[1] % upsample[1]:
            raise ConfigurationError(
                f"map {map_shape} does not hold {gene_count} genes with upsample factors {upsample}"
            )
    if noise_dim < 1 or disc_dense < 1 or min(gen_channels) < 1 or min(disc_channels) < 1:
        raise ConfigurationError("layer widths must be positive")
    return ArchitecturePlan(dataset, int(gene_count), map_shape, upsample, gen_channels,
                            tuple(disc_channels), int(disc_dense), int(noise_dim))


def build_generator(plan: ArchitecturePlan, rng=None) -> Sequential:
    rng = rng if rng is not None else np.random.default_rng(0)
    gh, gw = plan.grid
    c0 = plan.base_channels
    c1, c2 = plan.gen_channels
    return Sequential([
        Dense(plan.noise_dim, plan.gene_count, rng), BatchNorm(plan.gene_count), Activation("relu"),
        Reshape((gh, gw, c0)), UpSample2D(plan.upsample),
        Conv2D(c0, c1, 3, rng), BatchNorm(c1), Activation("relu"),
        Conv2D(c1, c2, 3, rng), BatchNorm(c2), Activation("relu"),
        Conv2D(c2, 1, 1, rng), Activation("sigmoid"),
    ])


def build_discriminator(plan: ArchitecturePlan, rng=None) -> Sequential:
    rng = rng if rng is not None else np.random.default_rng(0)
    rows, cols = plan.map_shape
    d1, d2 = plan.disc_channels
    return Sequential([
        Conv2D(1, d1, 3, rng), Activation("leaky_relu"), Dropout(plan.dropout, rng),
        Conv2D(d1, d2, 3, rng), Activation("leaky_relu"), Dropout(plan.dropout, rng),
        Flatten(), Dense(rows * cols * d2, plan.disc_dense, rng), Activation("leaky_relu"),
        Dense(plan.disc_dense, 2, rng), Activation("sigmoid"),
    ])


@dataclass
class GanModel:
    generator: Sequential
    discriminator: Sequential
    plan: ArchitecturePlan
    steps_trained: int = 0

    @property
    def noise_dim(self):
        return self.plan.noise_dim

    @property
    def map_shape(self):
        return self.plan.map_shape

    def reseed_dropout(self, seed):
        """Give every dropout layer a fresh stream derived from ``seed``."""
        drops = [layer for layer in self.discriminator.layers if isinstance(layer, Dropout)]
        for layer, child in zip(drops, np.random.SeedSequence(seed).spawn(len(drops))):
            layer.rng = np.random.default_rng(child)

    def save(self, path, **extra):
        arrays = {f"g.{k}": v for k, v in self.generator.state().items()}
        arrays.update({f"d.{k}": v for k, v in self.discriminator.state().items()})
        return checkpoint.save(
            path, "gan", arrays, plan=self.plan.to_dict(), steps_trained=self.steps_trained,
            generator=self.generator.manifest(), discriminator=self.discriminator.manifest(), **extra,
        )

    @classmethod
    def load(cls, path):
        manifest, arrays = checkpoint.load(path, kind="gan")
        gen = Sequential.from_manifest(manifest["generator"])
        disc = Sequential.from_manifest(manifest["discriminator"])
        gen.load_state({k[2:]: v for k, v in arrays.items() if k.startswith("g.")})
        disc.load_state({k[2:]: v for k, v in arrays.items() if k.startswith("d.")})
        return cls(gen, disc, ArchitecturePlan.from_dict(manifest["plan"]), manifest["steps_trained"])


def build_architecture(gene_count, dataset="breast", seed=0, **overrides) -> GanModel:
    plan = plan_architecture(gene_count, dataset, **overrides)
    rng = np.random.default_rng(seed)
    model = GanModel(build_generator(plan, rng), build_discriminator(plan, rng), plan)
    model.reseed_dropout(seed)
    return model


def sample_noise(rng, m, noise_dim=NOISE_DIM):
    return rng.random((m, noise_dim))


def generate(model: GanModel, noise, train=False, update_stats=False):
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    if noise.shape[1] != model.noise_dim:
        raise DimensionError(f"noise has width {noise.shape[1]}, generator expects {model.noise_dim}")
    if noise.size and (noise.min() < 0.0 or noise.max() > 1.0):
        raise InputRangeError("generator noise must be standard uniform, i.e. inside [0, 1]")
    return model.generator.forward(noise, train=train, update_stats=update_stats)


def as_maps(model: GanModel, values):
    """Reshape ``(m, genes)`` rows (or already-shaped maps) to ``(m, rows, cols, 1)``."""
    values = np.asarray(getattr(values, "values", values), dtype=float)
    rows, cols = model.map_shape
    if values.ndim == 2:
        if values.shape[1] != rows * cols:
            raise DimensionError(f"{values.shape[1]} genes per sample, map {rows}x{cols} holds {rows * cols}")
        return values.reshape(-1, rows, cols, 1)
    if values.shape[1:] != (rows, cols, 1):
        raise DimensionError(f"maps have shape {values.shape[1:]}, model expects {(rows, cols, 1)}")
    return values


def discriminate(model: GanModel, maps, train=False):
    return model.discriminator.forward(as_maps(model, maps), train=train)


def _log_clamped(s):
    """log of the clamped score and d/ds of it (zero where the clamp is active)."""
    c = np.clip(s, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    inside = (s > SCORE_CLAMP) & (s < 1.0 - SCORE_CLAMP)
    return np.log(c), np.where(inside, 1.0 / c, 0.0)


def gan_loss(d_real, d_fake, non_saturating=False):
    """``(loss_d, loss_g)`` from real-ness scores of real and generated samples.

    ``loss_d = -mean(log d_real + log(1 - d_fake))``; ``loss_g`` is
    ``mean(log(1 - d_fake))`` (minimized), or ``-mean(log d_fake)`` when
    ``non_saturating``.
    """
    d_real = np.asarray(d_real, dtype=float)
    d_fake = np.asarray(d_fake, dtype=float)
    log_real, _ = _log_clamped(d_real)
    log_not_fake, _ = _log_clamped(1.0 - d_fake)
    loss_d = -(np.mean(log_real) + np.mean(log_not_fake))
    loss_g = -np.mean(_log_clamped(d_fake)[0]) if non_saturating else np.mean(log_not_fake)
    return float(loss_d), float(loss_g)


def discriminator_objective(scores_real, scores_fake):
    """Two-unit discriminator loss and its gradient w.r.t. the stacked score matrix.

    Unit 0 carries ``gan_loss``'s ``loss_d``; unit 1 the same game with the
    roles of real and fake swapped.
    """
    mr, mf = scores_real.shape[0], scores_fake.shape[0]
    l0r, g0r = _log_clamped(scores_real[:, 0])
    l1r, g1r = _log_clamped(1.0 - scores_real[:, 1])
    l0f, g0f = _log_clamped(1.0 - scores_fake[:, 0])
    l1f, g1f = _log_clamped(scores_fake[:, 1])
    loss = -(l0r.mean() + l0f.mean()) - (l1f.mean() + l1r.mean())
    grad = np.empty((mr + mf, 2))
    grad[:mr, 0] = -g0r / mr
    grad[:mr, 1] = g1r / mr
    grad[mr:, 0] = g0f / mf
    grad[mr:, 1] = -g1f / mf
    return float(loss), grad


def discriminator_gradients(model: GanModel, real_maps, fake_maps):
    """Forward real and generated maps as one batch; returns ``(loss, scores, layer_grads)``."""
    real_maps = as_maps(model, real_maps)
    scores = model.discriminator.forward(np.concatenate([real_maps, fake_maps]), train=True)
    m = real_maps.shape[0]
    loss, grad = discriminator_objective(scores[:m], scores[m:])
    _, layer_grads = model.discriminator.backward(grad)
    return loss, scores, layer_grads


def discriminator_step(model: GanModel, real_maps, noise, lr):
    """One SGD step on the discriminator only; generator parameters and batch-norm buffers are untouched."""
    fake = generate(model, noise, train=True, update_stats=False)
    _, scores, layer_grads = discriminator_gradients(model, real_maps, fake)
    model.discriminator.sgd_step(layer_grads, lr)
    m = np.shape(real_maps)[0]
    loss_d, _ = gan_loss(scores[:m, 0], scores[m:, 0])
    return loss_d, float(scores[:m, 0].mean()), float(scores[m:, 0].mean())


def generator_step(model: GanModel, noise, lr, non_saturating=False):
    """One SGD step on the generator with the discriminator frozen."""
    fake = generate(model, noise, train=True, update_stats=True)
    scores = model.discriminator.forward(fake, train=True)
    s = scores[:, 0]
    m = s.shape[0]
    grad = np.zeros_like(scores)
    if non_saturating:
        grad[:, 0] = -_log_clamped(s)[1] / m
    else:
        grad[:, 0] = -_log_clamped(1.0 - s)[1] / m
    map_grad, _ = model.discriminator.backward(grad)
    _, layer_grads = model.generator.backward(map_grad)
    model.generator.sgd_step(layer_grads, lr)
    _, loss_g = gan_loss(np.full(1, 0.5), s, non_saturating)
    return loss_g, float(s.mean())


@dataclass
class GanTrainConfig:
    alpha_d: float = 3e-5
    alpha_g: float = 3e-5
    k: int = 1
    m: int = 8
    epochs: int = 10
    seed: int = 0
    non_saturating: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.alpha_d <= 0 or self.alpha_g <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.m < 2:
            raise ConfigurationError(f"minibatch must hold at least 2 samples for batch-norm, got {self.m}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")


@dataclass(frozen=True)
class TraceRow:
    step: int
    phase: str
    loss: float
    mean_real_score: float | None
    mean_fake_score: float


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def phase(self, name):
        return [r for r in self.rows if r.phase == name]

    def score_gaps(self):
        """Mean real-ness of real minus generated maps, one value per discriminator step."""
        return np.array([r.mean_real_score - r.mean_fake_score for r in self.phase("d")])

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "phase", "loss", "mean_real_score", "mean_fake_score"])
        for r in self.rows:
            real = "" if r.mean_real_score is None else repr(r.mean_real_score)
            writer.writerow([r.step, r.phase, repr(r.loss), real, repr(r.mean_fake_score)])
        return buf.getvalue()


def iterations_per_epoch(n_samples, config: GanTrainConfig):
    """Each epoch draws about one pass of real data through the k discriminator steps."""
    return max(1, math.ceil(n_samples / (config.k * config.m)))


def train(model: GanModel, real_data, config: GanTrainConfig, callback=None) -> TrainingTrace:
    """Alternate ``k`` discriminator steps and one generator step, ``iterations_per_epoch`` times per epoch.

    Real minibatches come from a stream of per-pass permutations of the data, so
    every sample is seen once before any is repeated.
    """
    values = np.asarray(getattr(real_data, "values", real_data), dtype=float)
    maps = as_maps(model, values)
    n = maps.shape[0]
    if config.m > n:
        raise BatchSizeError(f"minibatch of {config.m} exceeds the {n} training samples")
    if maps.min() < 0.0 or maps.max() > 1.0:
        raise InputRangeError("GAN training data must be scaled to [0, 1]")

    rng = np.random.default_rng(config.seed)
    model.reseed_dropout(config.seed + 1)
    queue = np.empty(0, dtype=int)

    def next_batch():
        nonlocal queue
        if queue.size < config.m:
            queue = np.concatenate([queue, rng.permutation(n)])
        batch, queue = queue[:config.m], queue[config.m:]
        return maps[batch]

    trace = TrainingTrace()
    steps = config.epochs * iterations_per_epoch(n, config)
    for step in range(steps):
        for _ in range(config.k):
            real = next_batch()
            loss_d, s_real, s_fake = discriminator_step(
                model, real, sample_noise(rng, config.m, model.noise_dim), config.alpha_d)
            trace.rows.append(TraceRow(step, "d", loss_d, s_real, s_fake))
        loss_g, s_fake = generator_step(
            model, sample_noise(rng, config.m, model.noise_dim), config.alpha_g, config.non_saturating)
        trace.rows.append(TraceRow(step, "g", loss_g, None, s_fake))
        if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
            raise NumericError(f"GAN loss became non-finite at step {step}")
        model.steps_trained += 1
        if callback is not None:
            callback(step, trace.rows[-1])
    return trace


@dataclass(frozen=True)
class MembershipResult:
    sample_ids: tuple
    scores: np.ndarray
    in_class: np.ndarray
    threshold: float


def classify_by_membership(model: GanModel, samples, threshold=0.5) -> MembershipResult:
    """A sample belongs to the training class iff its real-ness score is at least ``threshold``."""
    if model.steps_trained == 0:
        raise StateError("membership scores need a trained discriminator (model has 0 training steps)")
    scores = discriminate(model, samples)[:, 0]
    n = scores.shape[0]
    ids = tuple(getattr(samples, "sample_ids", range(n)))
    return MembershipResult(ids, scores, scores >= threshold, threshold)
