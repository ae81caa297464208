"""Adam optimisation, stratified splitting, checkpoints and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .autodiff import Tape, Tensor, grad
from .container import Container, read_container, to_bytes, write_container
from .model import Architecture, ModelParams, NumericError, decode, encode, fuse_inputs, recon_loss, total_loss

log = logging.getLogger(__name__)

DVRM_LR = 2e-5
ENCODER_STUDY_LR = 1e-3
SMOOTHING_WINDOW = 100


@dataclass
class AdamState:
    lr: float = DVRM_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _adam_kernel(p, g, m, v, step, b1, b2, eps, inv_sqrt_bc2):
    # p -= lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded into scalars
    c1 = p.dtype.type(1.0) - b1
    c2 = p.dtype.type(1.0) - b2
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + c1 * gi
        vi = b2 * v[i] + c2 * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi) * inv_sqrt_bc2 + eps)


def adam_update_reference(p, g, m, v, lr, b1, b2, eps, t):
    """Plain numpy form of one bias-corrected Adam update (in place)."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _arrays(params) -> list[np.ndarray]:
    if isinstance(params, ModelParams):
        return list(params.arrays().values())
    return [p if isinstance(p, np.ndarray) else p.data for p in params]


def adam_step(params, grads: Sequence[np.ndarray], state: AdamState):
    """Bias-corrected Adam step applied in place; returns ``(params, state)``.

    A non-finite gradient anywhere refuses the whole step (nothing is written).
    """
    arrays = _arrays(params)
    if len(arrays) != len(grads):
        raise ValueError(f"{len(arrays)} parameters but {len(grads)} gradients")
    for i, g in enumerate(grads):
        if g.shape != arrays[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {arrays[i].shape}")
        if not np.isfinite(g.sum()) and not np.isfinite(g).all():
            raise NumericError("adam_step gradient", i)
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        f = p.dtype.type
        gc = np.ascontiguousarray(g, dtype=p.dtype)
        _adam_kernel(p.reshape(-1), gc.reshape(-1), m.reshape(-1), v.reshape(-1),
                     f(state.lr / bc1), f(state.beta1), f(state.beta2), f(state.eps), f(1.0 / math.sqrt(bc2)))
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    iterations_per_epoch: int = 2000
    epochs: int = 10
    batch_size: int = 20
    seed: int = 0
    kl_weight: float = 1.0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lr: float = DVRM_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = 3
    image_dropout: float = 0.5

    def __post_init__(self):
        if not math.isclose(sum(self.split), 1.0, abs_tol=1e-9) or min(self.split) < 0:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {self.split}")
        if self.iterations_per_epoch < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("iterations_per_epoch and batch_size must be positive, epochs non-negative")
        if not 0.0 <= self.image_dropout <= 1.0:
            raise ValueError(f"image_dropout must lie in [0, 1], got {self.image_dropout}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be a positive number of epochs or None")


def split_dataset(pairs: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0, label: Callable | None = None):
    """Stratified deterministic split into ``(train, val, test)`` lists.

    ``label(pair)`` gives the class; by default the pair's first element's
    ``label`` attribute. Per class, counts are floor(ratio * n) with the
    remainder handed out by largest fractional part (ties to earlier splits).
    """
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9) or min(ratios) < 0:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    label = label or (lambda pair: pair[0].label)
    by_class: dict[int, list[int]] = {}
    for i, pair in enumerate(pairs):
        by_class.setdefault(int(label(pair)), []).append(i)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in ratios]
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        n = len(idx)
        if n < sum(1 for r in ratios if r > 0):
            raise ValueError(f"class {cls} has {n} samples, fewer than the {len(ratios)} splits")
        exact = [r * n for r in ratios]
        counts = [int(math.floor(e + 1e-9)) for e in exact]
        order = sorted(range(len(ratios)), key=lambda j: (-(exact[j] - counts[j]), j))
        for j in order[: n - sum(counts)]:
            counts[j] += 1
        perm = idx[rng.permutation(n)]
        start = 0
        for j, c in enumerate(counts):
            parts[j].extend(perm[start : start + c].tolist())
            start += c
    return tuple([pairs[i] for i in sorted(p)] for p in parts)


@dataclass
class LossCurve:
    losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)

    def smoothed(self, window: int = SMOOTHING_WINDOW) -> np.ndarray:
        """Trailing moving average; one value per complete window."""
        x = np.asarray(self.losses, dtype=np.float64)
        if len(x) < window:
            return x[:0]
        c = np.concatenate([[0.0], np.cumsum(x)])
        return (c[window:] - c[:-window]) / window

    def to_csv(self) -> str:
        rows = ["iteration,loss"]
        rows += [f"{i},{repr(float(v))}" for i, v in enumerate(self.losses)]
        return "\n".join(rows) + "\n"


@dataclass
class PairedArrays:
    """Stacked signals (N, C, T), images (N, H, W) and labels (N,)."""

    signals: np.ndarray
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_container(cls, c: Container) -> "PairedArrays":
        return cls(c["signals"], c["images"], c["labels"])


@dataclass
class TrainResult:
    params: ModelParams
    curve: LossCurve
    val_losses: list[float]
    best_epoch: int
    epochs_run: int
    stopped_early: bool = False


class TrainingDiverged(NumericError):
    """Training hit a non-finite loss or gradient; ``result`` holds the last good state."""

    def __init__(self, iteration: int, result: TrainResult):
        super().__init__("training loss", iteration)
        self.result = result


def validation_loss(data: PairedArrays, params: ModelParams, batch_size: int = 50) -> float:
    """Mean reconstruction NLL decoding each posterior mean from signals alone."""
    total = 0.0
    for s in range(0, len(data), batch_size):
        y = data.signals[s : s + batch_size].astype(params.dtype)
        q = encode(fuse_inputs(None, y, params), params)
        mean, log_var = decode(q.mean, params)
        x = Tensor(data.images[s : s + batch_size].astype(params.dtype))
        rec = recon_loss(x, mean, log_var if params.arch.learned_variance else None)
        total += rec.item() * len(y)
    return total / len(data)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless reshuffled passes without replacement; a short tail joins the next pass."""
    buf = np.zeros(0, dtype=np.int64)
    while True:
        while len(buf) < batch_size:
            buf = np.concatenate([buf, rng.permutation(n)])
        yield buf[:batch_size]
        buf = buf[batch_size:]


def train(
    train_data: PairedArrays,
    config: TrainConfig,
    params: ModelParams,
    val_data: PairedArrays | None = None,
    on_epoch: Callable[[int, float | None], None] | None = None,
) -> TrainResult:
    """Run up to ``epochs * iterations_per_epoch`` Adam steps.

    Returns the parameters with the best validation loss (or the final ones
    without a validation split). Early stopping ends training after
    ``patience`` epochs without validation improvement.
    """
    if len(train_data) == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    batches = _batches(len(train_data), config.batch_size, rng)
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    curve = LossCurve()
    val_losses: list[float] = []
    best, best_loss, best_epoch, stale = params.copy(), math.inf, 0, 0
    dtype = params.dtype
    d = params.arch.latent_dim
    plist = list(params)
    epochs_run = 0
    for epoch in range(config.epochs):
        for it in range(config.iterations_per_epoch):
            idx = next(batches)
            x = train_data.images[idx].astype(dtype)[:, None]
            y = train_data.signals[idx].astype(dtype)
            noise = rng.standard_normal((len(idx), d)).astype(dtype)
            keep = None
            if config.image_dropout > 0:
                keep = (rng.random(len(idx)) >= config.image_dropout).astype(dtype)
            step = epoch * config.iterations_per_epoch + it
            try:
                with Tape() as tape:
                    parts = total_loss(x, y, params, noise, config.kl_weight, keep)
                loss = parts.total.item()
                if not math.isfinite(loss):
                    raise NumericError("training loss", step)
                adam_step(params, grad(parts.total, tape, plist), state)
            except NumericError:
                log.error("non-finite value at iteration %d; aborting", step)
                # an overflowing step can leave non-finite weights; fall back to the best (or initial) state
                finite = all(np.isfinite(p.data).all() for p in plist)
                good = best if val_losses or not finite else params.copy()
                raise TrainingDiverged(step, TrainResult(good, curve, val_losses, best_epoch, epochs_run)) from None
            curve.losses.append(loss)
        epochs_run = epoch + 1
        vl = None
        if val_data is not None and len(val_data):
            vl = validation_loss(val_data, params)
            val_losses.append(vl)
            if vl < best_loss:
                best, best_loss, best_epoch, stale = params.copy(), vl, epoch, 0
            else:
                stale += 1
        log.info("epoch %d: train %.4f val %s", epoch, np.mean(curve.losses[-config.iterations_per_epoch:]), vl)
        if on_epoch:
            on_epoch(epoch, vl)
        if config.patience is not None and stale >= config.patience:
            return TrainResult(best, curve, val_losses, best_epoch, epochs_run, stopped_early=True)
    final = best if val_losses else params
    return TrainResult(final, curve, val_losses, best_epoch, epochs_run)


def checkpoint_container(params: ModelParams, meta: dict | None = None) -> Container:
    arrays = {name: np.asarray(a) for name, a in params.arrays().items()}
    info = {"kind": "dvrm-checkpoint", "architecture": params.arch.to_dict()}
    info.update(meta or {})
    return Container(arrays, info)


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    write_container(path, checkpoint_container(params, meta))


def checkpoint_bytes(params: ModelParams, meta: dict | None = None) -> bytes:
    return to_bytes(checkpoint_container(params, meta))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    c = read_container(path)
    if c.meta.get("kind") != "dvrm-checkpoint":
        raise ValueError(f"{path} is not a model checkpoint")
    arch = Architecture.from_dict(c.meta["architecture"])
    return ModelParams.from_arrays(arch, c.arrays), c.meta
