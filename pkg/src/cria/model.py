"""Slice batch -> views -> encoder -> purified embedding."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .encoder import NO_MASK, build_views, encoder_forward
from .purification import PurifyConfig, purify_and_fuse


def stack_batch(slices):
    """Group slices by shape; returns [(indices, B x C x N x D array, B x C ids)]."""
    if isinstance(slices, np.ndarray):
        b, c = slices.shape[:2]
        return [(np.arange(b), slices, np.tile(np.arange(c), (b, 1)))]
    groups = {}
    for i, s in enumerate(slices):
        groups.setdefault(s.data.shape, []).append(i)
    out = []
    for idx in groups.values():
        out.append(
            (
                np.asarray(idx),
                np.stack([slices[i].data for i in idx]),
                np.asarray([slices[i].channel_ids for i in idx]),
            )
        )
    return out


def embed_group(x, ids, params, mask=NO_MASK, purify=None, options=None, views=None):
    if views is None:
        views = build_views(x, params, ids, options)
    out = encoder_forward(views, params, mask)
    return purify_and_fuse(
        out.fused(), purify or PurifyConfig(), params["purify.ln.g"], params["purify.ln.b"], params.ln_eps
    )


def embed(slices, params, mask=NO_MASK, purify=None, options=None, cache=None):
    """``B x D`` purified embeddings for a batch (array or list of SegmentedSlice).

    Mixed shapes are encoded group by group and returned in input order. A
    dict passed as ``cache`` keeps the view features so a second call on the
    same batch (the masked twin pass) reuses them.
    """
    groups = stack_batch(slices)
    parts, order = [], []
    for g, (idx, x, ids) in enumerate(groups):
        views = None
        if cache is not None:
            if g not in cache:
                cache[g] = build_views(x, params, ids, options)
            views = cache[g]
        parts.append(embed_group(x, ids, params, _sub_mask(mask, idx), purify, options, views))
        order.extend(idx.tolist())
    if len(parts) == 1:
        return parts[0]
    inv = np.argsort(np.asarray(order))
    return T.getitem(T.concat(parts, axis=0), inv)


def _sub_mask(mask, idx):
    if isinstance(mask.masked_view, str):
        return mask
    return replace(mask, masked_view=[mask.masked_view[i] for i in idx])
