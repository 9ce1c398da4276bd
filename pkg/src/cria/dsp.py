"""Recording-level preprocessing: resampling, filtering, normalization, slicing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import CutoffError, EmptySignalError, TooShortError

TARGET_RATE = 200.0


@dataclass(frozen=True)
class EegRecording:
    channel_names: list
    sample_rate: float
    data: np.ndarray  # channels x samples

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"recording data must be 2-D, got shape {data.shape}")
        if len(self.channel_names) != data.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {data.shape[0]} data rows"
            )
        if not self.sample_rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(data)):
            raise ValueError("recording contains non-finite samples")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", list(self.channel_names))

    @property
    def n_samples(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class EegSlice:
    channel_names: list
    data: np.ndarray  # C x L at TARGET_RATE
    label: int | None = None
    sample_rate: float = TARGET_RATE

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))


@dataclass(frozen=True)
class SegmentedSlice:
    """A slice cut into ``N`` non-overlapping length-``D`` segments per channel."""

    data: np.ndarray  # C x N x D
    channel_ids: list = field(default_factory=list)
    label: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"segmented slice must be C x N x D, got {data.shape}")
        object.__setattr__(self, "data", data)
        ids = list(self.channel_ids) if self.channel_ids else list(range(data.shape[0]))
        if len(ids) != data.shape[0]:
            raise ValueError(f"{len(ids)} channel ids for {data.shape[0]} channels")
        if len(set(ids)) != len(ids):
            raise ValueError(f"channel ids must be distinct: {ids}")
        object.__setattr__(self, "channel_ids", ids)

    @property
    def shape(self):
        return self.data.shape


def resample(rec: EegRecording, target_rate: float = TARGET_RATE) -> EegRecording:
    """Rational-ratio polyphase resampling with the default Kaiser anti-alias filter."""
    if not target_rate > 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if rec.n_samples == 0:
        raise EmptySignalError("cannot resample an empty signal")
    if target_rate == rec.sample_rate:
        return replace(rec, data=rec.data.copy())
    ratio = Fraction(target_rate).limit_denominator(10_000) / Fraction(rec.sample_rate).limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    out = signal.resample_poly(rec.data, up, down, axis=1)
    n_out = int(round(rec.n_samples * float(target_rate) / float(rec.sample_rate)))
    if out.shape[1] < n_out:
        out = np.pad(out, ((0, 0), (0, n_out - out.shape[1])))
    return EegRecording(rec.channel_names, float(target_rate), out[:, :n_out])


def _check_cutoff(freq, fs, what):
    nyq = fs / 2.0
    if not 0 < freq < nyq:
        raise CutoffError(f"{what} {freq} Hz must lie in (0, {nyq}) Hz for fs={fs} Hz")


def bandpass_butterworth(rec: EegRecording, low=0.5, high=120.0, order=4) -> EegRecording:
    """Zero-phase Butterworth band-pass (second-order sections, forward-backward)."""
    _check_cutoff(low, rec.sample_rate, "low cutoff")
    _check_cutoff(high, rec.sample_rate, "high cutoff")
    if not low < high:
        raise CutoffError(f"low cutoff {low} must be below high cutoff {high}")
    sos = signal.butter(order, [low, high], btype="bandpass", fs=rec.sample_rate, output="sos")
    return replace(rec, data=_filtfilt_sos(sos, rec.data))


def _filtfilt_sos(sos, data):
    if data.shape[1] == 0:
        return data.copy()
    padlen = min(3 * (2 * len(sos) + 1), data.shape[1] - 1)
    return signal.sosfiltfilt(sos, data, axis=1, padlen=max(padlen, 0))


def notch_filter(rec: EegRecording, freqs=(1.0, 60.0), quality=30.0) -> EegRecording:
    """Cascade of second-order IIR notches, applied forward-backward."""
    for f0 in freqs:
        _check_cutoff(f0, rec.sample_rate, "notch frequency")
    data = rec.data
    for f0 in freqs:
        b, a = signal.iirnotch(f0, quality, fs=rec.sample_rate)
        data = _filtfilt_sos(signal.tf2sos(b, a), data)
    return replace(rec, data=data)


def percentile_normalize(sl: EegSlice, q=95.0) -> EegSlice:
    """Divide each channel by the q-th percentile (linear interpolation) of its |x|."""
    if sl.data.size == 0:
        raise EmptySignalError("cannot normalize an empty slice")
    p = np.percentile(np.abs(sl.data), q, axis=1, keepdims=True)
    divisor = np.where(p > 0, p, 1.0)
    return replace(sl, data=sl.data / divisor)


def segment_slice(sl: EegSlice, d: int, channel_ids=None) -> SegmentedSlice:
    c, n_samples = sl.data.shape
    if n_samples < d:
        raise TooShortError(f"slice length {n_samples} is shorter than segment length {d}")
    n = n_samples // d
    data = sl.data[:, : n * d].reshape(c, n, d)
    return SegmentedSlice(data.copy(), channel_ids if channel_ids is not None else [], sl.label)


def slice_recording(rec: EegRecording, slice_len: int, label=None):
    """Cut a recording into consecutive non-overlapping slices of ``slice_len`` samples."""
    n = rec.n_samples // slice_len
    return [
        EegSlice(rec.channel_names, rec.data[:, i * slice_len : (i + 1) * slice_len].copy(), label, rec.sample_rate)
        for i in range(n)
    ]


def preprocess_recording(
    rec: EegRecording,
    *,
    target_rate=TARGET_RATE,
    band=(0.5, 120.0),
    order=4,
    notch_freqs=(1.0, 60.0),
    notch_q=30.0,
    slice_seconds=10.0,
    label=None,
):
    """Resample, band-pass, notch, slice and normalize a recording.

    The band-pass upper edge is capped just below the post-resampling Nyquist
    frequency (120 Hz is unreachable at 200 Hz).
    """
    rec = resample(rec, target_rate)
    nyq = rec.sample_rate / 2.0
    high = min(band[1], 0.95 * nyq)
    rec = bandpass_butterworth(rec, band[0], high, order)
    if notch_freqs:
        rec = notch_filter(rec, [f for f in notch_freqs if f < nyq], notch_q)
    slices = slice_recording(rec, int(round(slice_seconds * rec.sample_rate)), label)
    return [percentile_normalize(s) for s in slices]
