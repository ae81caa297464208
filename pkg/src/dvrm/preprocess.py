"""Bandpass filtering, baseline correction and epoching of multichannel recordings."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SAMPLE_RATE_HZ = 128.0
CHANNELS = 32
BASELINE_MS = 1000.0
TRIAL_LEN = 235
DISCARD_PREFIX = 100


class EventError(IndexError):
    """An event's window falls outside the recording."""

    def __init__(self, event: int, onset: int, message: str):
        super().__init__(f"event {event} (onset {onset}): {message}")
        self.event = event
        self.onset = onset


@dataclass(frozen=True)
class RawRecording:
    """Channels x time samples with stimulus onsets given as sample indices."""

    samples: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ
    event_onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    labels: np.ndarray | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"samples must be channels x time, got shape {samples.shape}")
        onsets = np.asarray(self.event_onsets, dtype=np.int64).reshape(-1)
        if onsets.size and np.any(np.diff(onsets) <= 0):
            raise ValueError("event_onsets must be strictly increasing")
        if onsets.size and (onsets[0] < 0 or onsets[-1] >= samples.shape[1]):
            raise ValueError("event_onsets must index into the recording")
        if self.labels is not None and len(self.labels) != onsets.size:
            raise ValueError("labels must have one entry per event")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "event_onsets", onsets)

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    low_hz: float
    high_hz: float
    sample_rate_hz: float

    @property
    def num_taps(self) -> int:
        return len(self.taps)

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        n = np.arange(self.num_taps)
        return np.exp(-2j * np.pi * np.outer(f, n) / self.sample_rate_hz) @ self.taps

    def gain(self, freqs_hz) -> np.ndarray:
        return np.abs(self.response(freqs_hz))


@dataclass(frozen=True)
class SignalEpoch:
    data: np.ndarray
    label: int = -1
    subject_id: int = 0
    trial_index: int = 0


def _lowpass(cutoff_hz: float, fs: float, num_taps: int) -> np.ndarray:
    n = np.arange(num_taps) - (num_taps - 1) / 2
    h = 2.0 * cutoff_hz / fs * np.sinc(2.0 * cutoff_hz * n / fs) * np.hamming(num_taps)
    # unit DC gain per lowpass makes the bandpass difference exactly zero at DC
    return h / h.sum()


def design_fir_bandpass(
    low_hz: float = 1.0,
    high_hz: float = 63.9,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
    num_taps: int = 129,
) -> FirFilter:
    """Hamming-windowed sinc bandpass (difference of two windowed lowpasses).

    Taps are rescaled so the gain at the passband centre is 1.
    """
    nyquist = sample_rate_hz / 2.0
    if not 0.0 < low_hz < high_hz:
        raise ValueError(f"need 0 < low_hz < high_hz, got {low_hz}, {high_hz}")
    if high_hz > nyquist:
        raise ValueError(f"high_hz {high_hz} exceeds Nyquist {nyquist}")
    if num_taps < 3 or num_taps % 2 == 0:
        raise ValueError(f"num_taps must be odd and >= 3, got {num_taps}")
    taps = _lowpass(high_hz, sample_rate_hz, num_taps) - _lowpass(low_hz, sample_rate_hz, num_taps)
    fir = FirFilter(taps, low_hz, high_hz, sample_rate_hz)
    centre = fir.gain((low_hz + high_hz) / 2.0)[0]
    taps = taps / centre
    # exact symmetry regardless of rounding in the sinc evaluation
    taps = 0.5 * (taps + taps[::-1])
    return FirFilter(taps, low_hz, high_hz, sample_rate_hz)


def apply_filter(fir: FirFilter, recording: RawRecording) -> RawRecording:
    """Zero-phase-aligned FIR filtering of every channel; output length equals input."""
    if not np.isclose(fir.sample_rate_hz, recording.sample_rate_hz):
        raise ValueError(
            f"filter designed for {fir.sample_rate_hz} Hz, recording is {recording.sample_rate_hz} Hz"
        )
    x = recording.samples
    n = x.shape[1]
    delay = fir.group_delay
    out = np.empty_like(x)
    for ch in range(x.shape[0]):
        full = np.convolve(x[ch], fir.taps, mode="full")
        out[ch] = full[delay : delay + n]
    return replace(recording, samples=out)


def baseline_samples(baseline_ms: float, sample_rate_hz: float) -> int:
    return int(round(baseline_ms / 1000.0 * sample_rate_hz))


def baseline_correct(recording: RawRecording, baseline_ms: float = BASELINE_MS) -> RawRecording:
    """Subtract each event's pre-onset channel means from that event's segment.

    An event's segment runs from the start of its baseline window to the
    start of the next event's baseline window (or the end of the recording),
    so the baseline window itself ends up with zero mean.
    """
    b = baseline_samples(baseline_ms, recording.sample_rate_hz)
    if b < 1:
        raise ValueError(f"baseline window of {baseline_ms} ms is shorter than one sample")
    onsets = recording.event_onsets
    out = recording.samples.copy()
    starts = onsets - b
    for i, onset in enumerate(onsets):
        if starts[i] < 0:
            raise EventError(i, int(onset), f"needs {b} baseline samples before onset")
        if i and starts[i] < onsets[i - 1]:
            raise EventError(i, int(onset), "baseline window overlaps the previous event")
    for i, onset in enumerate(onsets):
        stop = starts[i + 1] if i + 1 < len(onsets) else recording.n_samples
        base = recording.samples[:, starts[i] : onset].mean(axis=1, keepdims=True)
        out[:, starts[i] : stop] -= base
    return replace(recording, samples=out)


def epoch_trials(
    recording: RawRecording,
    trial_len: int = TRIAL_LEN,
    discard_prefix: int = DISCARD_PREFIX,
    subject_id: int = 0,
) -> list[SignalEpoch]:
    """Cut ``samples[:, onset + discard_prefix : onset + trial_len]`` for every event."""
    if trial_len <= discard_prefix or discard_prefix < 0:
        raise ValueError(f"need 0 <= discard_prefix < trial_len, got {discard_prefix}, {trial_len}")
    epochs = []
    labels = recording.labels
    for i, onset in enumerate(recording.event_onsets):
        if onset + trial_len > recording.n_samples:
            raise EventError(i, int(onset), f"trial of {trial_len} samples runs past the recording end")
        data = recording.samples[:, onset + discard_prefix : onset + trial_len].copy()
        label = int(labels[i]) if labels is not None else -1
        epochs.append(SignalEpoch(data, label=label, subject_id=subject_id, trial_index=i))
    return epochs


def preprocess(
    recording: RawRecording,
    fir: FirFilter | None = None,
    baseline_ms: float = BASELINE_MS,
    trial_len: int = TRIAL_LEN,
    discard_prefix: int = DISCARD_PREFIX,
) -> list[SignalEpoch]:
    """Baseline correction, then bandpass filtering, then epoching."""
    fir = fir or design_fir_bandpass(sample_rate_hz=recording.sample_rate_hz)
    corrected = baseline_correct(recording, baseline_ms)
    return epoch_trials(apply_filter(fir, corrected), trial_len, discard_prefix)
