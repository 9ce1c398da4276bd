"""Temporal, spatial and spectral views of a segmented slice.

All builders accept a ``C x N x D`` array or a batch ``B x C x N x D`` and
return tensors of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dsp import SegmentedSlice
from .errors import PairingError, RegistryError

ROPE_BASE = 10000.0


# ------------------------------------------------------------------ FFT


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x, inverse=False):
    """Iterative decimation-in-time FFT along the last axis (length a power of two)."""
    n = x.shape[-1]
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        a = a.reshape(a.shape[:-1] + (n // m, m))
        even = a[..., :half]
        odd = a[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape[:-2] + (n,))
        m *= 2
    return a


def _fft_bluestein(x):
    """Arbitrary-length DFT as a chirp convolution evaluated with radix-2 FFTs."""
    n = x.shape[-1]
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * (k * k % (2 * n)) / n)
    m = 1 << int(np.ceil(np.log2(2 * n - 1)))
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:])[::-1]
    conv = _fft_radix2(_fft_radix2(a) * _fft_radix2(b), inverse=True) / m
    return conv[..., :n] * chirp


def fft(x):
    """Complex DFT along the last axis."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        return np.zeros(x.shape, dtype=np.complex128)
    if n & (n - 1) == 0:
        return _fft_radix2(x)
    return _fft_bluestein(x)


def fft_magnitude(x):
    """|DFT(x)| per bin along the last axis (full two-sided length)."""
    return np.abs(fft(x))


# ----------------------------------------------------------------- RoPE


def rope_angles(n_positions, d, start_index=1):
    """Angles theta[n, i] = n * 10000^(-2i/D) for pair index i = 1..D/2."""
    if d % 2:
        raise PairingError(f"RoPE pairs features; D={d} is odd")
    pos = np.arange(start_index, start_index + n_positions, dtype=np.float64)
    freq = ROPE_BASE ** (-2.0 * np.arange(1, d // 2 + 1) / d)
    return pos[:, None] * freq[None, :]


def rope_encode(x, start_index=1):
    """Rotate each (x[2i-1], x[2i]) pair of an ``... x N x D`` input by theta[n, i]."""
    x = T.as_tensor(x)
    n, d = x.shape[-2], x.shape[-1]
    if d % 2:
        raise PairingError(f"RoPE pairs features; D={d} is odd")
    theta = rope_angles(n, d, start_index)
    return T.rotate_pairs(x, np.cos(theta), np.sin(theta))


# ----------------------------------------------------- linear attention


def phi(u):
    """Positive feature map elu(u) + 1."""
    return T.elu(u) + 1.0


def linear_attention_core(x, wq, wk, wv):
    """phi(Q) (phi(K)^T V) normalized by phi(Q) (phi(K)^T 1); sequence axis is -2."""
    q, k, v = x @ wq, x @ wk, x @ wv
    fq, fk = phi(q), phi(k)
    kv = T.transpose(fk, _swap_last(fk.ndim)) @ v
    num = fq @ kv
    den = fq @ T.tsum(fk, axis=-2, keepdims=True).transpose(_swap_last(fk.ndim))
    return num / den


def linear_attention(x, params, eps=1e-5):
    """One linear-attention layer with residual connection and layer norm."""
    x = T.as_tensor(x)
    out = linear_attention_core(x, params["wq"], params["wk"], params["wv"])
    return T.layer_norm(x + out, params["ln_g"], params["ln_b"], eps)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# --------------------------------------------------------- channel registry


class ChannelRegistry:
    """Dense name -> index map over every channel seen in pre-training."""

    def __init__(self, names=(), c_max=None):
        self._index = {}
        for name in names:
            self.add(name)
        self.c_max = c_max if c_max is not None else len(self._index)
        if len(self._index) > self.c_max:
            raise RegistryError(f"{len(self._index)} channels exceed C_max={self.c_max}")

    def add(self, name):
        key = self._normalize(name)
        if key not in self._index:
            limit = getattr(self, "c_max", None)
            if limit is not None and len(self._index) >= limit:
                raise RegistryError(f"registry is full (C_max={limit}); cannot add {name!r}")
            self._index[key] = len(self._index)
        return self._index[key]

    @staticmethod
    def _normalize(name):
        return str(name).strip().upper()

    def lookup(self, names):
        out = []
        for name in names:
            key = self._normalize(name)
            if key not in self._index:
                raise RegistryError(f"unknown channel {name!r}")
            out.append(self._index[key])
        return out

    def validate(self, ids):
        for i in ids:
            if not 0 <= int(i) < self.c_max:
                raise RegistryError(f"channel id {i} outside [0, {self.c_max})")
        return list(ids)

    @property
    def names(self):
        return sorted(self._index, key=self._index.get)

    def __len__(self):
        return len(self._index)

    def __contains__(self, name):
        return self._normalize(name) in self._index


# ----------------------------------------------------------- view builders


@dataclass
class ViewOptions:
    embed_after_rope: bool = True  # temporal/spatial: RoPE first, then add E_channel
    spectral_norm: str = "none"  # "none" or "ortho" (divide magnitudes by sqrt(D))


def _as_batch(s):
    """Return (B x C x N x D array, B x C channel ids, squeeze flag)."""
    if isinstance(s, SegmentedSlice):
        return s.data[None], np.asarray([s.channel_ids]), True
    if isinstance(s, (list, tuple)) and s and isinstance(s[0], SegmentedSlice):
        return np.stack([x.data for x in s]), np.asarray([x.channel_ids for x in s]), False
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None], np.arange(arr.shape[0])[None], True
    return arr, np.tile(np.arange(arr.shape[1]), (arr.shape[0], 1)), False


def gather_channel_embedding(e_channel, ids, c_max=None):
    """B x C x 1 x D rows of ``e_channel`` for the given registry ids."""
    ids = np.asarray(ids, dtype=np.int64)
    c_max = e_channel.shape[0] if c_max is None else c_max
    if ids.size and (ids.min() < 0 or ids.max() >= c_max):
        raise RegistryError(f"channel ids {ids.tolist()} outside [0, {c_max})")
    rows = T.getitem(e_channel, ids)  # B x C x D
    return rows.reshape(ids.shape[0], ids.shape[1], 1, e_channel.shape[1])


def _squeeze(t, flag):
    return t.reshape(t.shape[1:]) if flag else t


def build_temporal_view(s, e_channel, lt_params, channel_ids=None, options=None):
    """RoPE over segments, add channel embedding, linear attention along N per channel."""
    options = options or ViewOptions()
    x, ids, squeeze = _as_batch(s)
    if channel_ids is not None:
        ids = np.atleast_2d(channel_ids)
    emb = gather_channel_embedding(e_channel, ids)
    if options.embed_after_rope:
        h = rope_encode(T.Tensor(x)) + emb
    else:
        h = rope_encode(T.Tensor(x) + emb)
    return _squeeze(linear_attention(h, lt_params), squeeze)


def build_spatial_view(s, e_channel, lt_params, channel_ids=None, options=None):
    """RoPE over segments, add channel embedding, linear attention along C per segment."""
    options = options or ViewOptions()
    x, ids, squeeze = _as_batch(s)
    if channel_ids is not None:
        ids = np.atleast_2d(channel_ids)
    emb = gather_channel_embedding(e_channel, ids)
    if options.embed_after_rope:
        h = rope_encode(T.Tensor(x)) + emb
    else:
        h = rope_encode(T.Tensor(x) + emb)
    h = h.transpose(0, 2, 1, 3)  # B x N x C x D
    out = linear_attention(h, lt_params).transpose(0, 2, 1, 3)
    return _squeeze(out, squeeze)


def build_spectral_view(s, e_channel, channel_ids=None, options=None, embed=True, rope=True):
    """Per-segment DFT magnitude, add channel embedding, then RoPE over segments."""
    options = options or ViewOptions()
    x, ids, squeeze = _as_batch(s)
    if channel_ids is not None:
        ids = np.atleast_2d(channel_ids)
    mag = fft_magnitude(x)
    if options.spectral_norm == "ortho":
        mag = mag / np.sqrt(x.shape[-1])
    h = T.Tensor(mag)
    if embed:
        h = h + gather_channel_embedding(e_channel, ids)
    if rope:
        h = rope_encode(h)
    return _squeeze(h, squeeze)
