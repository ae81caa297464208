"""Synthetic paired (glyph image, multichannel signal) datasets.

Every class owns a fixed spectral template: a handful of sinusoids with
per-channel amplitudes and phases, drawn from an rng seeded by the class id
alone. A trial is that template with small per-trial phase jitter, white
noise and a constant per-channel offset, preceded by a quiet baseline window.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .container import Container, write_container
from .glyphs import CLASSES, NUM_VARIANTS, GlyphSpec, class_char, class_id, render_glyph
from .preprocess import (
    BASELINE_MS,
    CHANNELS,
    DISCARD_PREFIX,
    SAMPLE_RATE_HZ,
    TRIAL_LEN,
    RawRecording,
    SignalEpoch,
    baseline_samples,
    preprocess,
)
from .training import split_dataset

TEMPLATE_FREQS_HZ = np.arange(2, 41)  # integer grid the class sinusoids are drawn from
TONES_PER_CLASS = 5
DEFAULT_NOISE_SIGMA = 4.0
PHASE_JITTER_RAD = 0.1


@dataclass(frozen=True)
class ClassSignature:
    freqs_hz: np.ndarray  # (F,)
    amplitudes: np.ndarray  # (channels, F)
    phases: np.ndarray  # (channels, F)


MAX_TEMPLATE_CORR = 0.4


def _draw_signature(cid: int, attempt: int, channels: int) -> ClassSignature:
    rng = np.random.default_rng([0x5EED, cid, attempt])
    freqs = np.sort(rng.choice(TEMPLATE_FREQS_HZ, size=TONES_PER_CLASS, replace=False)).astype(np.float64)
    amps = rng.uniform(0.2, 1.0, size=(channels, TONES_PER_CLASS)) / np.sqrt(TONES_PER_CLASS)
    phases = rng.uniform(0, 2 * np.pi, size=(channels, TONES_PER_CLASS))
    return ClassSignature(freqs, amps, phases)


def _template(sig: ClassSignature) -> np.ndarray:
    out = np.zeros((sig.amplitudes.shape[0], len(TEMPLATE_FREQS_HZ)))
    out[:, np.searchsorted(TEMPLATE_FREQS_HZ, sig.freqs_hz)] = sig.amplitudes
    return out


@lru_cache(maxsize=None)
def _signature_table(channels: int) -> tuple[ClassSignature, ...]:
    """Signatures for all classes, redrawn until each is weakly correlated with lower ids."""
    table: list[ClassSignature] = []
    flat: list[np.ndarray] = []
    for cid in range(len(CLASSES)):
        for attempt in range(10_000):
            sig = _draw_signature(cid, attempt, channels)
            t = _template(sig).ravel()
            if all(np.corrcoef(t, u)[0, 1] <= MAX_TEMPLATE_CORR for u in flat):
                break
        else:  # pragma: no cover - the grid is far from saturated
            raise RuntimeError(f"could not draw a signature for class {cid}")
        table.append(sig)
        flat.append(t)
    return tuple(table)


def class_signature(cid: int, channels: int = CHANNELS) -> ClassSignature:
    class_char(cid)  # validates the id
    return _signature_table(channels)[cid]


def spectral_template(cid: int, channels: int = CHANNELS) -> np.ndarray:
    """Channel x frequency amplitude matrix on the integer template grid."""
    return _template(class_signature(cid, channels))


@dataclass(frozen=True)
class SignalSynthSpec:
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    seed: int = 0
    trial_len: int = TRIAL_LEN
    channels: int = CHANNELS
    sample_rate_hz: float = SAMPLE_RATE_HZ
    baseline_ms: float = BASELINE_MS
    phase_jitter: float = PHASE_JITTER_RAD

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")

    def channel_offsets(self) -> np.ndarray:
        """Constant per-channel DC offsets shared by every trial of this seed."""
        return np.random.default_rng([0x0FF5, self.seed]).uniform(-5.0, 5.0, size=self.channels)


def _trial_rng(spec: SignalSynthSpec, cid: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, cid, trial_index])


def synth_signal(cid: int, trial_index: int, spec: SignalSynthSpec) -> SignalEpoch:
    """One raw ``channels x trial_len`` trial (no baseline, no preprocessing)."""
    block = synth_block(cid, trial_index, spec)
    b = baseline_samples(spec.baseline_ms, spec.sample_rate_hz)
    return SignalEpoch(block[:, b:], label=cid, trial_index=trial_index)


def synth_block(cid: int, trial_index: int, spec: SignalSynthSpec) -> np.ndarray:
    """Baseline window followed by the stimulus-locked trial, ``channels x (b + trial_len)``."""
    sig = class_signature(cid, spec.channels)
    rng = _trial_rng(spec, cid, trial_index)
    b = baseline_samples(spec.baseline_ms, spec.sample_rate_hz)
    jitter = rng.normal(0.0, spec.phase_jitter, size=len(sig.freqs_hz)) if spec.phase_jitter else 0.0
    t = np.arange(spec.trial_len) / spec.sample_rate_hz
    arg = 2 * np.pi * sig.freqs_hz[None, :, None] * t + (sig.phases + jitter)[..., None]
    clean = (sig.amplitudes[..., None] * np.sin(arg)).sum(axis=1)
    block = np.zeros((spec.channels, b + spec.trial_len))
    block[:, b:] = clean
    if spec.noise_sigma:
        block += rng.normal(0.0, spec.noise_sigma, size=block.shape)
    return block + spec.channel_offsets()[:, None]


def synth_recording(cids, trial_ids, spec: SignalSynthSpec) -> RawRecording:
    """Concatenate trial blocks into one recording with an event at each trial onset."""
    blocks = [synth_block(int(c), int(t), spec) for c, t in zip(cids, trial_ids)]
    b = baseline_samples(spec.baseline_ms, spec.sample_rate_hz)
    width = b + spec.trial_len
    onsets = b + width * np.arange(len(blocks))
    samples = np.concatenate(blocks, axis=1) if blocks else np.zeros((spec.channels, 0))
    return RawRecording(samples, spec.sample_rate_hz, onsets, np.asarray(cids, dtype=np.int64))


@dataclass(frozen=True)
class CombinationSpec:
    name: str
    classes: tuple[int, ...]
    per_class_counts: tuple[int, int, int]  # train, val, test for each class

    @property
    def trials_per_class(self) -> int:
        return sum(self.per_class_counts)

    @property
    def totals(self) -> tuple[int, int, int]:
        k = len(self.classes)
        return tuple(c * k for c in self.per_class_counts)

    @property
    def ratios(self) -> tuple[float, float, float]:
        n = self.trials_per_class
        return tuple(c / n for c in self.per_class_counts)


_PAIR_NAMES = (
    "0-1 2-8 3-7 4-5 6-9 "
    "a-z b-y c-x d-w e-v f-u g-t h-s i-q j-r k-p l-o m-n "
    "A-Z B-Y C-X D-W E-V F-U G-T H-S I-R J-Q K-P L-N M-O "
    "0-h 2-g e-4 f-3 7-X S-8 6-D K-2 g-D p-Q R-W H-a"
).split()


def _registry() -> dict[str, CombinationSpec]:
    reg = {}
    for name in _PAIR_NAMES:
        a, b = name.split("-")
        reg[name] = CombinationSpec(name, (class_id(a), class_id(b)), (200, 25, 25))
    reg["BRAINS"] = CombinationSpec("BRAINS", tuple(class_id(c) for c in "BRAINS"), (40, 5, 5))
    return reg


COMBINATIONS = _registry()


def get_combination(name: str) -> CombinationSpec:
    try:
        return COMBINATIONS[name]
    except KeyError:
        raise KeyError(f"unknown combination {name!r}; valid: {', '.join(COMBINATIONS)}") from None


@dataclass
class Pair:
    epoch: SignalEpoch
    image: np.ndarray
    font_id: int

    @property
    def label(self) -> int:
        return self.epoch.label


def generate_pairs(spec: CombinationSpec, synth: SignalSynthSpec) -> list[Pair]:
    """All trials of a combination, interleaved by class, preprocessed and paired with glyphs.

    Trial ``t`` of a class shows font variant ``t mod 50``.
    """
    n = spec.trials_per_class
    cids = [c for _ in range(n) for c in spec.classes]
    tids = [t for t in range(n) for _ in spec.classes]
    rec = synth_recording(cids, tids, synth)
    epochs = preprocess(rec, trial_len=synth.trial_len, discard_prefix=DISCARD_PREFIX, baseline_ms=synth.baseline_ms)
    glyph_cache: dict[tuple[int, int], np.ndarray] = {}
    pairs = []
    for ep, c, t in zip(epochs, cids, tids):
        key = (c, t % NUM_VARIANTS)
        if key not in glyph_cache:
            glyph_cache[key] = render_glyph(GlyphSpec(CLASSES[c], key[1])).pixels
        ep = SignalEpoch(ep.data, label=c, subject_id=0, trial_index=t)
        pairs.append(Pair(ep, glyph_cache[key], key[1]))
    return pairs


def pairs_to_container(pairs: list[Pair], meta: dict) -> Container:
    return Container(
        {
            "signals": np.stack([p.epoch.data for p in pairs]).astype(np.float32),
            "images": np.stack([p.image for p in pairs]).astype(np.float32),
            "labels": np.array([p.label for p in pairs], dtype=np.int64),
            "font_ids": np.array([p.font_id for p in pairs], dtype=np.int64),
            "trial_ids": np.array([p.epoch.trial_index for p in pairs], dtype=np.int64),
        },
        meta,
    )


SPLIT_NAMES = ("train", "val", "test")


def build_splits(spec: CombinationSpec, synth: SignalSynthSpec) -> dict[str, list[Pair]]:
    pairs = generate_pairs(spec, synth)
    parts = split_dataset(pairs, spec.ratios, seed=synth.seed, label=lambda p: p.label)
    out = dict(zip(SPLIT_NAMES, parts))
    for name, total in zip(SPLIT_NAMES, spec.totals):
        if len(out[name]) != total:
            raise AssertionError(f"{spec.name} {name}: {len(out[name])} pairs, expected {total}")
    return out


def build_combination(spec: CombinationSpec, synth: SignalSynthSpec, out_dir) -> dict[str, str]:
    """Write ``train/val/test.dvrm`` plus ``manifest.json``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    splits = build_splits(spec, synth)
    paths = {}
    for name, pairs in splits.items():
        meta = {"combination": spec.name, "split": name, "seed": synth.seed, "noise_sigma": synth.noise_sigma}
        path = os.path.join(out_dir, f"{name}.dvrm")
        write_container(path, pairs_to_container(pairs, meta))
        paths[name] = path
    manifest = {
        "combination": spec.name,
        "classes": list(spec.classes),
        "characters": [class_char(c) for c in spec.classes],
        "counts": dict(zip(SPLIT_NAMES, spec.totals)),
        "seed": synth.seed,
        "noise_sigma": synth.noise_sigma,
        "files": {k: os.path.basename(v) for k, v in paths.items()},
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = mpath
    return paths
