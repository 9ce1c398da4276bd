"""View-masked contrastive pre-training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import MaskSpec
from .errors import BatchSizeError, DivergenceError, TemperatureError
from .model import embed

MASKABLE = ("temporal", "spatial", "spectral")


@dataclass
class PretrainBatch:
    slices: object  # B x C x N x D array or list of SegmentedSlice
    mask_choices: list

    def __post_init__(self):
        if len(self.slices) < 2:
            raise BatchSizeError(f"contrastive pre-training needs B >= 2, got {len(self.slices)}")
        if len(self.mask_choices) != len(self.slices):
            raise BatchSizeError("one mask choice per sample is required")


def draw_mask_choices(rng, batch_size, per_batch=False):
    """Uniform choice over the three views, per sample (or one for the whole batch)."""
    if per_batch:
        return [MASKABLE[rng.integers(3)]] * batch_size
    return [MASKABLE[i] for i in rng.integers(0, 3, size=batch_size)]


def l2_normalize(x, eps=1e-12):
    return x / T.sqrt(T.tsum(T.square(x), axis=-1, keepdims=True) + eps)


def twin_embed(batch, params, purify=None, options=None):
    """Unmasked and view-masked embeddings from the same parameters, rows L2-normalized."""
    if len(batch.slices) < 2:
        raise BatchSizeError(f"contrastive pre-training needs B >= 2, got {len(batch.slices)}")
    cache = {}
    f = embed(batch.slices, params, MaskSpec("none"), purify, options, cache)
    f_masked = embed(batch.slices, params, MaskSpec(list(batch.mask_choices)), purify, options, cache)
    return l2_normalize(f), l2_normalize(f_masked)


def contrastive_loss(f, f_prime, temperature=0.2, symmetric=False):
    """Cross-entropy of softmax(<F, F'>/T) rows against the identity pairing."""
    if not temperature > 0:
        raise TemperatureError(f"temperature must be positive, got {temperature}")
    f, f_prime = T.as_tensor(f), T.as_tensor(f_prime)
    b = f.shape[0]
    logits = T.scale(f @ f_prime.transpose(1, 0), 1.0 / temperature)
    diag = (np.arange(b), np.arange(b))
    loss = T.neg(T.mean(T.getitem(T.log_softmax(logits, axis=-1), diag)))
    if symmetric:
        other = T.neg(T.mean(T.getitem(T.log_softmax(logits, axis=0), diag)))
        loss = T.scale(loss + other, 0.5)
    return loss


def pretrain_step(batch, state, temperature=0.2, purify=None, options=None, symmetric=False):
    """One optimizer step on the contrastive objective; returns the loss value."""
    f, f_prime = twin_embed(batch, state.params, purify, options)
    loss = contrastive_loss(f, f_prime, temperature, symmetric)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(state.step, value)
    state.optimizer.zero_grad()
    T.backward(loss)
    state.optimizer.step()
    state.step += 1
    hist = {v: batch.mask_choices.count(v) for v in MASKABLE}
    state.log.append((state.step, value, hist))
    return value


def sample_batch(x, rng, batch_size, per_batch=False):
    """Draw ``batch_size`` slices without replacement and a mask choice for each."""
    idx = rng.choice(len(x), size=batch_size, replace=False)
    if isinstance(x, np.ndarray):
        slices = x[np.sort(idx)]
    else:
        slices = [x[i] for i in np.sort(idx)]
    return PretrainBatch(slices, draw_mask_choices(rng, batch_size, per_batch))


def pretrain(x, state, steps, batch_size=16, temperature=0.2, purify=None, options=None,
             per_batch_mask=False, symmetric=False, callback=None):
    """Run ``steps`` pre-training steps over the slice pool ``x``."""
    losses = []
    for _ in range(steps):
        batch = sample_batch(x, state.rng, batch_size, per_batch_mask)
        losses.append(pretrain_step(batch, state, temperature, purify, options, symmetric))
        if callback is not None:
            callback(state)
    return losses
