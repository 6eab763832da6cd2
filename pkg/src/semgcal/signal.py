"""Deterministic sEMG preprocessing: segmentation, band-pass filtering, spectrograms.

The pipeline turns a continuous 10-channel recording sampled at 1 kHz into
fixed-size classifier inputs: 150 ms windows advanced every 50 ms, band-pass
filtered 20-495 Hz, and (for the ConvNet input) per-channel magnitude
spectrograms arranged as a 4x10x24 (time x channel x frequency) tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .errors import EmptyInputError, ParameterError, ShapeError

NUM_CHANNELS = 10
SAMPLE_RATE_HZ = 1000
WINDOW_MS = 150
OVERLAP_MS = 100
BANDPASS_LOW_HZ = 20.0
BANDPASS_HIGH_HZ = 495.0
BANDPASS_ORDER = 4
SPEC_WIN = 48
SPEC_OVERLAP = 14
SPEC_HOP = SPEC_WIN - SPEC_OVERLAP  # 34
STRIDE_MS = WINDOW_MS - OVERLAP_MS  # 50


@dataclass(frozen=True)
class RawRecording:
    """A multichannel integer sample stream, optionally with per-sample labels."""

    samples: np.ndarray  # (channels, time), integer-valued
    rate_hz: int = SAMPLE_RATE_HZ
    labels: np.ndarray | None = None  # (time,) gesture ids

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != NUM_CHANNELS:
            raise ShapeError(
                f"expected ({NUM_CHANNELS}, time) samples, got {self.samples.shape}"
            )
        if self.rate_hz <= 0:
            raise ParameterError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.labels is not None and len(self.labels) != self.samples.shape[1]:
            raise ShapeError(
                f"labels length {len(self.labels)} != stream length {self.samples.shape[1]}"
            )

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class Segment:
    """One classification window: (channels, window_samples) real values."""

    data: np.ndarray  # (10, 150) float64
    start_index: int
    label: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != NUM_CHANNELS:
            raise ShapeError(f"expected ({NUM_CHANNELS}, W) segment, got {self.data.shape}")


@dataclass(frozen=True)
class SpectrogramExample:
    """ConvNet input: (4, 10, 24) = (time, channel, frequency), non-negative."""

    tensor: np.ndarray
    label: int | None = None

    def __post_init__(self):
        if self.tensor.shape != (4, NUM_CHANNELS, SPEC_WIN // 2):
            raise ShapeError(f"expected (4, 10, 24) tensor, got {self.tensor.shape}")


def _majority_label(window_labels: np.ndarray) -> int:
    """Majority label of a window; ties go to the label seen latest (incoming gesture)."""
    values, counts = np.unique(window_labels, return_counts=True)
    best = counts.max()
    tied = values[counts == best]
    if len(tied) == 1:
        return int(tied[0])
    last_seen = [np.flatnonzero(window_labels == v)[-1] for v in tied]
    return int(tied[int(np.argmax(last_seen))])


def segment_stream(
    rec: RawRecording, window_ms: int = WINDOW_MS, overlap_ms: int = OVERLAP_MS
) -> list[Segment]:
    """Slice a recording into overlapping windows.

    With the defaults (150 ms window, 100 ms overlap at 1 kHz) the stride is
    50 samples and a stream of T samples yields floor((T - 150) / 50) + 1
    segments ordered by start index.
    """
    if not window_ms > overlap_ms >= 0:
        raise ParameterError(f"need window_ms > overlap_ms >= 0, got {window_ms}, {overlap_ms}")
    window = window_ms * rec.rate_hz // 1000
    stride = (window_ms - overlap_ms) * rec.rate_hz // 1000
    if stride < 1:
        raise ParameterError("stride shorter than one sample")
    t = rec.num_samples
    if t < window:
        raise EmptyInputError(f"stream of {t} samples is shorter than one {window}-sample window")
    data = np.asarray(rec.samples, dtype=np.float64)
    segments = []
    for start in range(0, t - window + 1, stride):
        label = None
        if rec.labels is not None:
            label = _majority_label(rec.labels[start : start + window])
        segments.append(Segment(data=data[:, start : start + window], start_index=start, label=label))
    return segments


@lru_cache(maxsize=16)
def _bandpass_sos(low_hz: float, high_hz: float, rate_hz: int, order: int) -> np.ndarray:
    # scipy doubles the order for band-pass designs, so N = order // 2 gives
    # an overall filter of the requested order.
    return sps.butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=rate_hz, output="sos")


def bandpass_filter(
    seg: Segment,
    low_hz: float = BANDPASS_LOW_HZ,
    high_hz: float = BANDPASS_HIGH_HZ,
    order: int = BANDPASS_ORDER,
    rate_hz: int = SAMPLE_RATE_HZ,
) -> Segment:
    """Causal Butterworth band-pass, applied independently per channel.

    Forward-only (no zero-phase pass): the windows feed a latency-sensitive
    control loop, so the filter may not look ahead.
    """
    sos = design_bandpass(low_hz, high_hz, order, rate_hz)
    filtered = sps.sosfilt(sos, np.asarray(seg.data, dtype=np.float64), axis=-1)
    return Segment(data=filtered, start_index=seg.start_index, label=seg.label)


def design_bandpass(
    low_hz: float = BANDPASS_LOW_HZ,
    high_hz: float = BANDPASS_HIGH_HZ,
    order: int = BANDPASS_ORDER,
    rate_hz: int = SAMPLE_RATE_HZ,
) -> np.ndarray:
    """Second-order sections of the band-pass filter (bilinear-transform design)."""
    if not 0 < low_hz < high_hz:
        raise ParameterError(f"need 0 < low < high, got {low_hz}, {high_hz}")
    if high_hz >= rate_hz / 2:
        raise ParameterError(f"high cutoff {high_hz} Hz >= Nyquist {rate_hz / 2} Hz")
    if order < 2 or order % 2 != 0:
        raise ParameterError(f"order must be a positive even integer, got {order}")
    return _bandpass_sos(float(low_hz), float(high_hz), int(rate_hz), int(order))


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window w[k] = 0.5 * (1 - cos(2 pi k / n))."""
    if n < 2:
        raise ParameterError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def spectrogram_channel(
    channel_signal: np.ndarray, win: int = SPEC_WIN, hop: int = SPEC_HOP
) -> np.ndarray:
    """Magnitude spectrogram of one channel: (frames, win // 2 + 1).

    Frames start at multiples of `hop`; each is Hann-windowed and transformed
    with a real DFT. For a 150-sample window with win=48, hop=34 this yields
    a 4x25 matrix (frames at offsets 0, 34, 68, 102).
    """
    x = np.asarray(channel_signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected 1-D channel signal, got shape {x.shape}")
    if len(x) < win:
        raise ShapeError(f"signal of {len(x)} samples shorter than window {win}")
    n_frames = (len(x) - win) // hop + 1
    w = hann_window(win)
    frames = np.stack([x[i * hop : i * hop + win] for i in range(n_frames)])
    return np.abs(np.fft.rfft(frames * w, axis=-1))


def build_spectrogram_example(seg: Segment) -> SpectrogramExample:
    """Per-channel spectrograms with the DC bin dropped, axes (time, channel, freq).

    Removing bin 0 discards baseline drift and motion artifacts; the remaining
    24 bins cover roughly 21-500 Hz at the 48-point window.
    """
    if seg.data.shape[1] < SPEC_WIN:
        raise ShapeError(f"segment of {seg.data.shape[1]} samples shorter than {SPEC_WIN}")
    x = np.asarray(seg.data, dtype=np.float64)
    n_frames = (x.shape[1] - SPEC_WIN) // SPEC_HOP + 1
    w = hann_window(SPEC_WIN)
    # (channels, frames, win) -> rfft -> drop bin 0 -> (frames, channels, 24)
    frames = np.stack(
        [x[:, i * SPEC_HOP : i * SPEC_HOP + SPEC_WIN] for i in range(n_frames)], axis=1
    )
    mags = np.abs(np.fft.rfft(frames * w, axis=-1))[:, :, 1:]
    tensor = np.ascontiguousarray(np.swapaxes(mags, 0, 1), dtype=np.float32)
    return SpectrogramExample(tensor=tensor, label=seg.label)


def preprocess_segment(seg: Segment) -> Segment:
    """Band-pass a raw segment with the default 20-495 Hz fourth-order filter."""
    return bandpass_filter(seg)
