"""Top-k channel and segment selection before pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class PurifyConfig:
    k_c: int | None = None  # None -> ceil(C/2)
    k_t: int | None = None  # None -> ceil(N/2)

    def resolve(self, c, n):
        k_c = math.ceil(c / 2) if self.k_c is None else self.k_c
        k_t = math.ceil(n / 2) if self.k_t is None else self.k_t
        return min(max(k_c, 1), c), min(max(k_t, 1), n)


def segment_norms(x):
    """Euclidean norm over D of every segment vector: ``... x C x N``."""
    return np.sqrt(np.sum(np.square(x), axis=-1))


def channel_scores(x):
    """Mean over segments of the per-segment Euclidean norm."""
    data = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)
    return segment_norms(data).mean(axis=-1)


def _top_k(values, k):
    # stable sort on the negated values keeps the lower index first on ties
    return np.argsort(-values, kind="stable")[:k]


def selection_weights(x, cfg):
    """Pooling weights (``B x C x N``): 1/(k_c k_t) on selected segments, 0 elsewhere."""
    data = x.data if isinstance(x, T.Tensor) else np.asarray(x)
    b, c, n, _ = data.shape
    k_c, k_t = cfg.resolve(c, n)
    norms = segment_norms(data)
    scores = norms.mean(axis=-1)
    w = np.zeros((b, c, n))
    for i in range(b):
        for ch in _top_k(scores[i], k_c):
            w[i, ch, _top_k(norms[i, ch], k_t)] = 1.0 / (k_c * k_t)
    return w


def purify_and_fuse(x, cfg=None, gain=None, bias=None, eps=1e-5):
    """Select top-k_c channels and top-k_t segments, average, and layer-normalize.

    Accepts ``C x N x D`` or ``B x C x N x D``; the selection is a hard,
    non-differentiable choice, so unselected segments receive zero gradient.
    """
    cfg = cfg or PurifyConfig()
    x = T.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    b, c, n, d = x.shape
    w = selection_weights(x, cfg)
    pooled = T.tsum(x * w[..., None], axis=(1, 2))  # B x D
    gain = gain if gain is not None else np.ones(d)
    bias = bias if bias is not None else np.zeros(d)
    out = T.layer_norm(pooled, gain, bias, eps)
    return out.reshape((d,)) if squeeze else out
