"""Packed slice dataset file and the synthetic spectral-mixture generator.

File layout (little-endian)::

    b"CRIA"  u16 version
    u32 n_records  u16 C  u32 L  f64 sample_rate  u16 n_classes
    u32 names_len  names (UTF-8, newline separated)
    n_records x (i32 label, C*L f32 samples)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

MAGIC = b"CRIA"
VERSION = 1
_HEAD = struct.Struct("<4sHIHIdHI")


@dataclass
class SliceDataset:
    channel_names: list
    sample_rate: float
    n_classes: int
    data: np.ndarray  # n x C x L float32
    labels: np.ndarray  # n int32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype="<f4")
        self.labels = np.asarray(self.labels, dtype="<i4")
        if self.data.ndim != 3:
            raise DataFormatError(f"slice data must be n x C x L, got {self.data.shape}")
        if len(self.labels) != len(self.data):
            raise DataFormatError(f"{len(self.labels)} labels for {len(self.data)} slices")
        if len(self.channel_names) != self.data.shape[1]:
            raise DataFormatError(f"{len(self.channel_names)} names for {self.data.shape[1]} channels")

    def __len__(self):
        return len(self.labels)

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def slice_len(self):
        return self.data.shape[2]

    def subset(self, idx):
        return SliceDataset(self.channel_names, self.sample_rate, self.n_classes, self.data[idx], self.labels[idx])

    def to_bytes(self):
        names = "\n".join(self.channel_names).encode("utf-8")
        n, c, length = self.data.shape
        head = _HEAD.pack(MAGIC, VERSION, n, c, length, float(self.sample_rate), self.n_classes, len(names))
        records = np.empty((n, 1 + c * length), dtype="<i4")
        records[:, 0] = self.labels
        records[:, 1:] = self.data.reshape(n, c * length).view("<i4")
        return head + names + records.tobytes()

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _HEAD.size:
            raise DataFormatError(f"file too short for header ({len(buf)} bytes)")
        magic, version, n, c, length, rate, n_classes, names_len = _HEAD.unpack_from(buf)
        if magic != MAGIC:
            raise DataFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DataFormatError(f"unsupported dataset version {version} (expected {VERSION})")
        start = _HEAD.size + names_len
        record_bytes = 4 * (1 + c * length)
        if len(buf) != start + n * record_bytes:
            raise DataFormatError(
                f"declared {n} records of {record_bytes} bytes but file has {len(buf) - start} payload bytes"
            )
        names = buf[_HEAD.size : start].decode("utf-8")
        names = names.split("\n") if names else []
        records = np.frombuffer(buf, dtype="<i4", offset=start).reshape(n, 1 + c * length)
        data = records[:, 1:].copy().view("<f4").reshape(n, c, length)
        return cls(names, rate, n_classes, data, records[:, 0].copy())

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def split_indices(n, rng, val_frac=0.15, test_frac=0.15, groups=None):
    """Seeded shuffle split into (train, val, test); ``groups`` keeps each group in one part."""
    if groups is None:
        perm = rng.permutation(n)
        n_test = int(round(n * test_frac))
        n_val = int(round(n * val_frac))
        return np.sort(perm[n_test + n_val :]), np.sort(perm[n_test : n_test + n_val]), np.sort(perm[:n_test])
    groups = np.asarray(groups)
    uniq = rng.permutation(np.unique(groups))
    n_test = int(round(len(uniq) * test_frac))
    n_val = int(round(len(uniq) * val_frac))
    parts = (uniq[n_test + n_val :], uniq[n_test : n_test + n_val], uniq[:n_test])
    return tuple(np.flatnonzero(np.isin(groups, p)) for p in parts)


# ------------------------------------------------------------- synthetic data

CLASS_CENTERS = (6.0, 15.0, 35.0, 50.0, 70.0, 25.0)


@dataclass
class SyntheticSpec:
    n_classes: int = 3
    n_channels: int = 8
    seconds: float = 10.0
    sample_rate: float = 200.0
    per_class: int = 300
    seed: int = 0
    half_width: float = 2.0  # Hz, tone band around each class centre
    tones: int = 2
    snr_db: float = 0.0


def class_band(k, half_width=2.0):
    c = CLASS_CENTERS[k]
    return c - half_width, c + half_width


def generate_synthetic_dataset(spec: SyntheticSpec) -> SliceDataset:
    """Class-specific band-limited tone mixtures with random phases, gains and noise.

    Random per-channel phases make the classes inseparable by a linear map of
    the raw samples while their spectra stay disjoint. Slices come out
    95th-percentile normalized per channel.
    """
    if spec.n_classes > len(CLASS_CENTERS):
        raise ValueError(f"at most {len(CLASS_CENTERS)} synthetic classes")
    rng = np.random.default_rng(spec.seed)
    c = spec.n_channels
    length = int(round(spec.seconds * spec.sample_rate))
    t = np.arange(length) / spec.sample_rate
    n = spec.n_classes * spec.per_class
    labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    data = np.zeros((n, c, length))
    noise_std = np.sqrt(0.5 * spec.tones / 10 ** (spec.snr_db / 10.0))
    for i, k in enumerate(labels):
        lo, hi = class_band(k, spec.half_width)
        freqs = rng.uniform(lo, hi, size=spec.tones)
        gains = rng.uniform(0.5, 1.5, size=(c, 1))
        phases = rng.uniform(0, 2 * np.pi, size=(c, spec.tones))
        sig = np.cos(2 * np.pi * freqs[None, :, None] * t + phases[..., None]).sum(axis=1)
        data[i] = gains * sig + noise_std * gains * rng.normal(size=(c, length))
    perm = rng.permutation(n)
    data, labels = data[perm], labels[perm]
    p95 = np.percentile(np.abs(data), 95, axis=2, keepdims=True)
    data = data / np.where(p95 > 0, p95, 1.0)
    names = [f"EEG{i + 1:02d}" for i in range(c)]
    return SliceDataset(names, spec.sample_rate, spec.n_classes, data, labels)
