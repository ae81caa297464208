"""Encoder/decoder pair mapping (image, signal) to a Gaussian latent and back.

Encoder: the signal epoch is projected to an image-sized map and stacked with
the stimulus image (T0); an initial conv gives shallow features T1; a chain of
residual dense blocks wrapped in a global residual gives T2; a conv gives T3;
T3 and T1 are concatenated (T4) and two dense heads emit the posterior mean
and log-variance.

Decoder: a dense map turns z into a small feature map (J1), a conv gives J2,
then seven deconvolution+activation blocks (J3..J9) grow it to image size.
Two 1x1 heads emit the pixel mean (sigmoid) and, when the variance is
learned, a clamped pixel log-variance.
"""

from __future__ import annotations

import dataclasses
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

LOG_2PI = math.log(2.0 * math.pi)


class NumericError(FloatingPointError):
    """Non-finite values appeared in a forward pass."""

    def __init__(self, stage: str, index: int):
        super().__init__(f"non-finite activations at {stage} (layer {index})")
        self.stage = stage
        self.index = index


@dataclass(frozen=True)
class RdbConfig:
    conv_layers_per_rdb: int = 4
    growth_channels: int = 16
    base_channels: int = 32
    residual_scale: float = 0.2

    def __post_init__(self):
        for name in ("conv_layers_per_rdb", "growth_channels", "base_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.residual_scale <= 1.0:
            raise ValueError("residual_scale must lie in (0, 1]")


@dataclass(frozen=True)
class Architecture:
    """Everything that determines parameter shapes and the forward graph."""

    rdb: RdbConfig = field(default_factory=RdbConfig)
    num_rdb: int = 7
    latent_dim: int = 128
    kernel_size: int = 2
    encoder_stride: int = 4
    image_size: int = 28
    signal_channels: int = 32
    signal_steps: int = 135
    decoder_width: int = 32
    decoder_seed_size: int = 7
    decoder_channels: tuple[int, ...] = (32, 32, 32, 32, 32, 32, 16)
    decoder_strides: tuple[int, ...] = (1, 1, 1, 1, 1, 2, 2)
    learned_variance: bool = False
    log_var_min: float = -6.0
    log_var_max: float = 2.0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.num_rdb < 1 or self.latent_dim < 1:
            raise ValueError("num_rdb and latent_dim must be positive")
        if len(self.decoder_channels) != len(self.decoder_strides):
            raise ValueError("decoder_channels and decoder_strides differ in length")
        if self.image_size % self.encoder_stride:
            raise ValueError("image_size must be divisible by encoder_stride")
        if self.decoder_seed_size * math.prod(self.decoder_strides) != self.image_size:
            raise ValueError("decoder_seed_size * prod(decoder_strides) must equal image_size")

    @property
    def encoder_grid(self) -> int:
        return self.image_size // self.encoder_stride

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["decoder_channels"] = list(self.decoder_channels)
        d["decoder_strides"] = list(self.decoder_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["rdb"] = RdbConfig(**d.get("rdb", {}))
        for key in ("decoder_channels", "decoder_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Activation shape (per sample) after each stage, for documentation and tests."""
        g, c = self.encoder_grid, self.rdb.base_channels
        plan = [
            ("T0", (2, self.image_size, self.image_size)),
            ("T1", (c, g, g)),
            ("T2", (c, g, g)),
            ("T3", (c, g, g)),
            ("T4", (2 * c, g, g)),
            ("z", (self.latent_dim,)),
        ]
        s = self.decoder_seed_size
        plan.append(("J1", (self.decoder_width, s, s)))
        plan.append(("J2", (self.decoder_width, s, s)))
        for i, (ch, st) in enumerate(zip(self.decoder_channels, self.decoder_strides)):
            s *= st
            plan.append((f"J{i + 3}", (ch, s, s)))
        plan.append(("pixel_mean", (1, self.image_size, self.image_size)))
        return plan


def miniature_architecture(learned_variance: bool = True) -> Architecture:
    """Small network used for exhaustive gradient checks."""
    return Architecture(
        rdb=RdbConfig(conv_layers_per_rdb=2, growth_channels=4, base_channels=8),
        num_rdb=1,
        latent_dim=4,
        decoder_width=4,
        decoder_channels=(4, 4, 4, 4, 4, 4, 4),
        learned_variance=learned_variance,
    )


def _param_shapes(arch: Architecture) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every trainable tensor, in a fixed order."""
    k = arch.kernel_size
    k1 = max(k, arch.encoder_stride)
    c = arch.rdb.base_channels
    gc = arch.rdb.growth_channels
    px = arch.image_size * arch.image_size
    sig = arch.signal_channels * arch.signal_steps
    out: list[tuple[str, tuple[int, ...], int]] = [
        ("enc.project.w", (sig, px), sig),
        ("enc.project.b", (px,), 0),
        ("enc.conv1.w", (c, 2, k1, k1), 2 * k1 * k1),
        ("enc.conv1.b", (c,), 0),
    ]
    for r in range(arch.num_rdb):
        cin = c
        for j in range(arch.rdb.conv_layers_per_rdb):
            out.append((f"enc.rdb{r}.conv{j}.w", (gc, cin, k, k), cin * k * k))
            out.append((f"enc.rdb{r}.conv{j}.b", (gc,), 0))
            cin += gc
        out.append((f"enc.rdb{r}.fuse.w", (c, cin, 1, 1), cin))
        out.append((f"enc.rdb{r}.fuse.b", (c,), 0))
    out.append(("enc.conv3.w", (c, c, k, k), c * k * k))
    out.append(("enc.conv3.b", (c,), 0))
    feat = 2 * c * arch.encoder_grid**2
    d = arch.latent_dim
    out += [
        ("enc.mean.w", (feat, d), feat),
        ("enc.mean.b", (d,), 0),
        ("enc.logvar.w", (feat, d), feat),
        ("enc.logvar.b", (d,), 0),
    ]
    w0, s = arch.decoder_width, arch.decoder_seed_size
    out += [
        ("dec.dense.w", (d, w0 * s * s), d),
        ("dec.dense.b", (w0 * s * s,), 0),
        ("dec.conv.w", (w0, w0, k, k), w0 * k * k),
        ("dec.conv.b", (w0,), 0),
    ]
    cin = w0
    for i, (ch, st) in enumerate(zip(arch.decoder_channels, arch.decoder_strides)):
        out.append((f"dec.dr{i}.w", (cin, ch, k, k), max(1, cin * k * k // (st * st))))
        out.append((f"dec.dr{i}.b", (ch,), 0))
        cin = ch
    out.append(("dec.mean.w", (1, cin, 1, 1), cin))
    out.append(("dec.mean.b", (1,), 0))
    if arch.learned_variance:
        out.append(("dec.logvar.w", (1, cin, 1, 1), cin))
        out.append(("dec.logvar.b", (1,), 0))
    return out


def parameter_count(arch: Architecture) -> int:
    return sum(math.prod(shape) for _, shape, _ in _param_shapes(arch))


class ModelParams:
    """Ordered collection of named Parameters plus the architecture that shaped them."""

    def __init__(self, arch: Architecture, params: "OrderedDict[str, Parameter]"):
        self.arch = arch
        self.params = params

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """He-uniform weights, zero biases; RDB fusion convs x0.1, signal projection and latent heads x0.01."""
        rng = np.random.default_rng(seed)
        params: OrderedDict[str, Parameter] = OrderedDict()
        for name, shape, fan_in in _param_shapes(arch):
            if name.endswith(".b"):
                data = np.zeros(shape)
            else:
                bound = math.sqrt(6.0 / fan_in)
                data = rng.uniform(-bound, bound, size=shape)
                if ".fuse." in name:
                    data *= 0.1
                elif name.startswith(("enc.mean.", "enc.logvar.")):
                    data *= 0.01  # posterior starts close to the prior
                elif name == "enc.project.w":
                    data *= 0.01  # keeps trial noise from dominating the projected signal at the start
            params[name] = Parameter(data.astype(dtype), name=name)
        return cls(arch, params)

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: dict[str, np.ndarray]) -> "ModelParams":
        expected = _param_shapes(arch)
        names = [n for n, _, _ in expected]
        if sorted(names) != sorted(arrays):
            missing = set(names) ^ set(arrays)
            raise ValueError(f"parameter names do not match architecture: {sorted(missing)[:5]}")
        params = OrderedDict()
        for name, shape, _ in expected:
            arr = np.array(arrays[name])
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} != {shape}")
            params[name] = Parameter(arr, name=name)
        return cls(arch, params)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.params.items())

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, {n: p.data.copy() for n, p in self.params.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, {n: p.data.astype(dtype) for n, p in self.params.items()})


@dataclass
class LatentGaussian:
    mean: Tensor
    log_var: Tensor


def _check(t: Tensor, stage: str, index: int) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericError(stage, index)
    return t


def fuse_inputs(x, y, params: ModelParams) -> Tensor:
    """Build T0 of shape (N, 2, 28, 28): image channel then projected signal.

    ``x`` may be None (inference: image channel zero-filled). ``x`` and ``y``
    accept arrays or Tensors of shape (N, 28, 28) / (N, 1, 28, 28) and
    (N, 32, 135).
    """
    arch = params.arch
    s = arch.image_size
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=params.dtype))
    n = y.shape[0]
    if y.shape[1:] != (arch.signal_channels, arch.signal_steps):
        raise ad.ShapeError(
            f"fuse_inputs: signal shape {y.shape[1:]} != "
            f"({arch.signal_channels}, {arch.signal_steps})"
        )
    if x is None:
        x = Tensor(np.zeros((n, 1, s, s), dtype=params.dtype))
    else:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=params.dtype))
        if x.shape[0] != n:
            raise ad.ShapeError(f"fuse_inputs: batch axis 0 differs: images {x.shape[0]}, signals {n}")
        x = x.reshape(n, 1, s, s)
    proj = ad.dense(y.reshape(n, -1), params["enc.project.w"], params["enc.project.b"])
    return ad.concat([x, proj.reshape(n, 1, s, s)], axis=1)


def _rdb(t: Tensor, params: ModelParams, r: int) -> Tensor:
    arch = params.arch
    feats = [t]
    for j in range(arch.rdb.conv_layers_per_rdb):
        inp = feats[0] if j == 0 else ad.concat(feats, axis=1)
        h = ad.conv2d(inp, params[f"enc.rdb{r}.conv{j}.w"], params[f"enc.rdb{r}.conv{j}.b"])
        feats.append(ad.activation(h, "leaky_relu", arch.leaky_slope))
    fused = ad.conv2d(ad.concat(feats, axis=1), params[f"enc.rdb{r}.fuse.w"], params[f"enc.rdb{r}.fuse.b"])
    return t + fused * arch.rdb.residual_scale


def encode(fused: Tensor, params: ModelParams) -> LatentGaussian:
    arch = params.arch
    n = fused.shape[0]
    t1 = ad.conv2d(
        fused, params["enc.conv1.w"], params["enc.conv1.b"], stride=arch.encoder_stride,
        padding="same",
    )
    _check(t1, "encoder conv1", 0)
    h = t1
    for r in range(arch.num_rdb):
        h = _check(_rdb(h, params, r), "encoder rdb", r + 1)
    t2 = t1 + h * arch.rdb.residual_scale
    t3 = _check(ad.conv2d(t2, params["enc.conv3.w"], params["enc.conv3.b"]), "encoder conv3", arch.num_rdb + 1)
    t4 = ad.concat([t3, t1], axis=1).reshape(n, -1)
    mean = ad.dense(t4, params["enc.mean.w"], params["enc.mean.b"])
    log_var = ad.dense(t4, params["enc.logvar.w"], params["enc.logvar.b"])
    _check(mean, "encoder mean head", arch.num_rdb + 2)
    _check(log_var, "encoder log-variance head", arch.num_rdb + 2)
    return LatentGaussian(mean, log_var)


def reparameterize(q: LatentGaussian, noise: np.ndarray) -> Tensor:
    """z = mean + exp(log_var / 2) * noise; the noise is a constant."""
    noise = np.asarray(noise, dtype=q.mean.dtype)
    if noise.shape != q.mean.shape:
        raise ad.ShapeError(f"reparameterize: noise shape {noise.shape} != {q.mean.shape}")
    std = ad.exp(q.log_var * 0.5)
    return q.mean + std * Tensor(noise)


def kl_divergence(q: LatentGaussian, reduction: str = "sum") -> Tensor:
    """KL(q || N(0, I)) in closed form, summed over latent dims.

    ``reduction="sum"`` also sums over the batch; ``"mean"`` averages.
    """
    mu, lv = q.mean, q.log_var
    terms = mu * mu + ad.exp(lv) - lv - 1.0
    total = ad.sum(terms) * 0.5
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total * (1.0 / mu.shape[0])
    raise ValueError(f"unknown reduction {reduction!r}")


def decode(z: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Return (pixel_mean, pixel_log_var), both (N, 1, 28, 28).

    With a fixed variance the log-variance is a constant zero tensor.
    """
    arch = params.arch
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=params.dtype))
    n = z.shape[0]
    if z.ndim != 2 or z.shape[1] != arch.latent_dim:
        raise ad.ShapeError(f"decode: latent axis 1 has size {z.shape[1:]}, expected {arch.latent_dim}")
    s, w0, slope = arch.decoder_seed_size, arch.decoder_width, arch.leaky_slope
    j1 = ad.dense(z, params["dec.dense.w"], params["dec.dense.b"]).reshape(n, w0, s, s)
    j1 = _check(ad.activation(j1, "leaky_relu", slope), "decoder dense", 0)
    h = ad.activation(ad.conv2d(j1, params["dec.conv.w"], params["dec.conv.b"]), "leaky_relu", slope)
    _check(h, "decoder conv", 1)
    for i, st in enumerate(arch.decoder_strides):
        h = ad.deconv2d(h, params[f"dec.dr{i}.w"], params[f"dec.dr{i}.b"], stride=st, padding="same")
        h = _check(ad.activation(h, "leaky_relu", slope), "decoder DR block", i + 2)
    logits = ad.conv2d(h, params["dec.mean.w"], params["dec.mean.b"])
    pixel_mean = _check(ad.activation(logits, "sigmoid"), "decoder mean head", len(arch.decoder_strides) + 2)
    if arch.learned_variance:
        raw = ad.conv2d(h, params["dec.logvar.w"], params["dec.logvar.b"])
        pixel_log_var = ad.clamp(raw, arch.log_var_min, arch.log_var_max)
        _check(pixel_log_var, "decoder log-variance head", len(arch.decoder_strides) + 2)
    else:
        pixel_log_var = Tensor(np.zeros(pixel_mean.shape, dtype=pixel_mean.dtype))
    return pixel_mean, pixel_log_var


def recon_loss(
    x, pixel_mean: Tensor, pixel_log_var: Tensor | None = None, include_constant: bool = False
) -> Tensor:
    """Gaussian negative log-likelihood summed over pixels, averaged over the batch.

    ``pixel_log_var=None`` selects the fixed unit-variance objective
    0.5 * sum((x - mean)^2). The additive 0.5 * log(2 pi) per pixel does not
    affect gradients and is left out unless ``include_constant`` is set.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=pixel_mean.dtype))
    if x.data.size != pixel_mean.data.size:
        raise ad.ShapeError(f"recon_loss: target shape {x.shape} vs mean {pixel_mean.shape}")
    n = pixel_mean.shape[0]
    x = x.reshape(pixel_mean.shape)
    diff = x - pixel_mean
    const = LOG_2PI * pixel_mean.data[0].size * 0.5 if include_constant else 0.0
    if pixel_log_var is None:
        return ad.sum(diff * diff) * (0.5 / n) + const
    if pixel_log_var.shape != pixel_mean.shape:
        raise ad.ShapeError(f"recon_loss: log-variance shape {pixel_log_var.shape} vs {pixel_mean.shape}")
    per_pixel = pixel_log_var + diff * diff * ad.exp(-pixel_log_var)
    return ad.sum(per_pixel) * (0.5 / n) + const


@dataclass
class LossParts:
    total: Tensor
    recon: Tensor
    kl: Tensor
    posterior: LatentGaussian


def total_loss(
    x,
    y,
    params: ModelParams,
    noise: np.ndarray,
    kl_weight: float = 1.0,
    image_keep: np.ndarray | None = None,
) -> LossParts:
    """Per-sample average of reconstruction NLL plus KL to the standard normal prior.

    ``image_keep`` is an optional (N,) 0/1 mask; zeros replace that sample's
    image channel with zeros, the layout the encoder sees at inference time.
    """
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=params.dtype))
    enc_x = xt
    if image_keep is not None:
        mask = np.asarray(image_keep, dtype=params.dtype).reshape(-1, *([1] * (xt.ndim - 1)))
        enc_x = Tensor(xt.data * mask)
    q = encode(fuse_inputs(enc_x, y, params), params)
    z = reparameterize(q, noise)
    pixel_mean, pixel_log_var = decode(z, params)
    rec = recon_loss(xt, pixel_mean, pixel_log_var if params.arch.learned_variance else None)
    kl = kl_divergence(q, reduction="mean")
    total = rec + kl * kl_weight if kl_weight != 1.0 else rec + kl
    return LossParts(total, rec, kl, q)


def posterior_means(y, params: ModelParams, batch_size: int = 50) -> np.ndarray:
    """Encode signals with a zero image channel; returns (N, d) posterior means."""
    y = np.asarray(y, dtype=params.dtype)
    chunks = []
    for start in range(0, len(y), batch_size):
        q = encode(fuse_inputs(None, y[start : start + batch_size], params), params)
        chunks.append(q.mean.data)
    return np.concatenate(chunks, axis=0)


def reconstruct(y, params: ModelParams, batch_size: int = 50) -> np.ndarray:
    """Images predicted from signals alone: (N, 28, 28) in [0, 1]."""
    y = np.asarray(y, dtype=params.dtype)
    for p in params:
        if not np.isfinite(p.data).all():
            raise NumericError(f"parameter {p.name}", -1)
    s = params.arch.image_size
    out = []
    for start in range(0, len(y), batch_size):
        q = encode(fuse_inputs(None, y[start : start + batch_size], params), params)
        pixel_mean, _ = decode(q.mean, params)
        out.append(pixel_mean.data.reshape(-1, s, s))
    return np.concatenate(out, axis=0) if out else np.zeros((0, s, s), dtype=params.dtype)
