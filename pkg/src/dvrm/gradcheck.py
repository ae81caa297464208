"""Finite-difference verification of every parameter gradient of the model loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, finite_diff_check, grad
from .model import Architecture, ModelParams, miniature_architecture, total_loss

DEFAULT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class LayerCheck:
    name: str
    entries: int
    worst_rel_err: float

    def passed(self, tol: float = DEFAULT_TOLERANCE) -> bool:
        return self.worst_rel_err <= tol


def _sample_indices(size: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    if size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def gradient_check(
    arch: Architecture | None = None,
    seed: int = 0,
    eps: float = 1e-5,
    max_entries: int = 24,
    batch: int = 2,
    corrupt: float = 1.0,
) -> list[LayerCheck]:
    """Compare tape gradients of the total loss with central differences, in float64.

    At most ``max_entries`` deterministic entries per parameter are probed.
    ``corrupt`` multiplies the analytic gradients; any value other than 1
    emulates a broken backward pass and must make the check fail.
    """
    arch = arch or miniature_architecture(learned_variance=True)
    rng = np.random.default_rng(seed)
    params = ModelParams.init(arch, seed=seed, dtype=np.float64)
    for p in params:
        if p.name.startswith(("enc.mean.", "enc.logvar.")) and p.name.endswith(".w"):
            p.data *= 100.0  # undo the small head init so encoder gradients are well above roundoff
        if p.name.endswith(".b"):  # no gradient structurally zero at the probe point
            p.data[...] = rng.normal(0.0, 0.1, size=p.data.shape)
    s = arch.image_size
    x = rng.random((batch, 1, s, s))
    y = rng.normal(size=(batch, arch.signal_channels, arch.signal_steps))
    noise = rng.normal(size=(batch, arch.latent_dim))

    def f():
        return total_loss(x, y, params, noise).total

    with Tape() as tape:
        loss = f()
    plist = list(params)
    grads = grad(loss, tape, plist)
    out = []
    for p, g in zip(plist, grads):
        idx = _sample_indices(p.data.size, max_entries, rng)
        err = finite_diff_check(f, p, eps, indices=idx, analytic=g * corrupt)
        out.append(LayerCheck(p.name, len(idx), err))
    return out


def format_report(checks: list[LayerCheck], tol: float = DEFAULT_TOLERANCE) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'parameter'.ljust(width)}  entries  worst_rel_err  status"]
    for c in checks:
        status = "ok" if c.passed(tol) else "FAIL"
        lines.append(f"{c.name.ljust(width)}  {c.entries:7d}  {c.worst_rel_err:13.3e}  {status}")
    worst = max(c.worst_rel_err for c in checks)
    verdict = "PASS" if all(c.passed(tol) for c in checks) else "FAIL"
    lines.append(f"{verdict}: worst relative error {worst:.3e} (tolerance {tol:.0e})")
    return "\n".join(lines) + "\n"
