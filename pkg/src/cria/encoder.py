"""Asymmetric cross-view encoder.

The spectral stream updates by self-attention; the temporal and spatial
streams query the previous layer's spectral features by cross-attention.
All three streams are ``B x C x N x D`` and attention runs over the
flattened ``C*N`` token axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import multiview as mv
from . import tensor as T
from .errors import ConfigError, DimensionError

VIEWS = ("none", "temporal", "spatial", "spectral")
VIEW_CODE = {name: i for i, name in enumerate(VIEWS)}
STREAMS = ("tem", "spa", "spe")


@dataclass
class MaskSpec:
    """Which view is hidden (per sample or for all) and the attention-value mask ratio."""

    masked_view: object = "none"  # a view name, or a sequence of names/codes per sample
    attn_value_mask_ratio: float = 0.0
    rng_seed: int | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if not 0.0 <= self.attn_value_mask_ratio < 1.0:
            raise ConfigError(f"attention mask ratio must lie in [0, 1), got {self.attn_value_mask_ratio}")
        if self.rng is None and self.rng_seed is not None:
            self.rng = np.random.default_rng(self.rng_seed)

    def codes(self, batch):
        mv_ = self.masked_view
        if isinstance(mv_, str):
            if mv_ not in VIEW_CODE:
                raise ConfigError(f"unknown view {mv_!r}")
            return np.full(batch, VIEW_CODE[mv_])
        codes = np.asarray([VIEW_CODE[v] if isinstance(v, str) else int(v) for v in mv_])
        if codes.shape != (batch,):
            raise DimensionError(f"{codes.size} mask choices for batch of {batch}")
        return codes


NO_MASK = MaskSpec()


@dataclass
class MultiViewFeatures:
    f_tem: T.Tensor
    f_spa: T.Tensor
    f_spe: T.Tensor

    def __post_init__(self):
        shapes = {self.f_tem.shape, self.f_spa.shape, self.f_spe.shape}
        if len(shapes) != 1:
            raise DimensionError(f"view shapes diverge: {sorted(shapes)}")

    @property
    def shape(self):
        return self.f_tem.shape

    def as_tuple(self):
        return self.f_tem, self.f_spa, self.f_spe

    def fused(self):
        return (self.f_tem + self.f_spa + self.f_spe) * (1.0 / 3.0)


@dataclass
class EncoderParams:
    """Named learnable tensors plus the hyperparameters that shape them."""

    d: int
    n_heads: int = 4
    n_layers: int = 5
    c_max: int = 64
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ConfigError(f"D={self.d} is not divisible by h={self.n_heads}")
        if self.d % 2:
            raise ConfigError(f"D={self.d} must be even for rotary encoding")
        if self.n_layers < 1:
            raise ConfigError("at least one encoder layer is required")

    @classmethod
    def init(cls, d, n_heads=4, n_layers=5, c_max=64, ffn_mult=4, rng=None, ln_eps=1e-5):
        p = cls(d, n_heads, n_layers, c_max, ffn_mult, ln_eps)
        rng = rng if rng is not None else np.random.default_rng(0)
        t = p.tensors

        def w(name, fan_in, fan_out):
            t[name] = T.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)), True, name)

        def ln(name, width):
            t[name + ".g"] = T.Tensor(np.ones(width), True, name + ".g")
            t[name + ".b"] = T.Tensor(np.zeros(width), True, name + ".b")

        t["e_channel"] = T.Tensor(rng.normal(0.0, 0.1, (c_max, d)), True, "e_channel")
        for s in STREAMS:
            t[f"pad.{s}"] = T.Tensor(rng.normal(0.0, 1.0, d), True, f"pad.{s}")
        for view in ("tem_lt", "spa_lt"):
            for m in ("wq", "wk", "wv"):
                w(f"{view}.{m}", d, d)
            ln(f"{view}.ln", d)
        for layer in range(n_layers):
            for s in STREAMS:
                pre = f"layer{layer}.{s}"
                for m in ("wq", "wk", "wv", "wo"):
                    w(f"{pre}.{m}", d, d)
                ln(f"{pre}.ln1", d)
                w(f"{pre}.ffn.w1", d, ffn_mult * d)
                t[f"{pre}.ffn.b1"] = T.Tensor(np.zeros(ffn_mult * d), True, f"{pre}.ffn.b1")
                w(f"{pre}.ffn.w2", ffn_mult * d, d)
                t[f"{pre}.ffn.b2"] = T.Tensor(np.zeros(d), True, f"{pre}.ffn.b2")
                ln(f"{pre}.ln2", d)
        ln("purify.ln", d)
        return p

    def __getitem__(self, name):
        return self.tensors[name]

    def lt_params(self, view):
        pre = f"{view}_lt"
        return {
            "wq": self.tensors[f"{pre}.wq"],
            "wk": self.tensors[f"{pre}.wk"],
            "wv": self.tensors[f"{pre}.wv"],
            "ln_g": self.tensors[f"{pre}.ln.g"],
            "ln_b": self.tensors[f"{pre}.ln.b"],
        }

    def layer(self, index, stream):
        pre = f"layer{index}.{stream}."
        return {k[len(pre):]: v for k, v in self.tensors.items() if k.startswith(pre)}

    def keep_last_layers(self, k):
        """Drop all but the last ``k`` encoder layers, renumbering from zero."""
        if not 1 <= k <= self.n_layers:
            raise ConfigError(f"cannot keep {k} of {self.n_layers} layers")
        first = self.n_layers - k
        kept = {}
        for name, tensor in self.tensors.items():
            if name.startswith("layer"):
                idx, rest = name[5:].split(".", 1)
                if int(idx) < first:
                    continue
                name = f"layer{int(idx) - first}.{rest}"
                tensor.name = name
            kept[name] = tensor
        self.tensors = kept
        self.n_layers = k
        return self

    def parameters(self):
        return list(self.tensors.values())

    def hyper(self):
        return {
            "d": self.d,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "c_max": self.c_max,
            "ffn_mult": self.ffn_mult,
            "ln_eps": self.ln_eps,
        }


# ------------------------------------------------------------- attention


def split_heads(x, h):
    """``B x T x D`` -> ``B x h x T x D/h``."""
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _replace_rows(x, pad, which):
    """Replace samples flagged in ``which`` (length B) by ``pad`` broadcast over tokens."""
    if not np.any(which):
        return x
    return T.where(which[:, None, None], T.broadcast_to(pad, x.shape), x)


def attention_weights(q, k, mask=NO_MASK):
    """softmax(Q K^T / sqrt(d_k)) with optional post-softmax value masking."""
    dk = q.shape[-1]
    scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(dk))
    ratio = mask.attn_value_mask_ratio
    if ratio > 0.0:
        rng = mask.rng if mask.rng is not None else np.random.default_rng(mask.rng_seed)
        keep = rng.random(scores.shape) >= ratio
        # zeroing post-softmax weights and renormalizing is a softmax over the kept logits
        return T.masked_softmax(scores, keep, axis=-1)
    return T.softmax(scores, axis=-1)


def multi_head(q_src, kv_src, p, n_heads, mask=NO_MASK, q_pad=None, q_pad_rows=None, kv_pad=None, kv_pad_rows=None):
    """Multi-head attention of ``q_src`` (``B x Tq x D``) over ``kv_src`` (``B x Tk x D``).

    ``q_pad``/``kv_pad`` replace the projected query (resp. key and value) of
    the samples flagged in ``*_pad_rows`` by the pad vector.
    """
    q = q_src @ p["wq"]
    k = kv_src @ p["wk"]
    v = kv_src @ p["wv"]
    if q_pad is not None:
        q = _replace_rows(q, q_pad, q_pad_rows)
    if kv_pad is not None:
        k = _replace_rows(k, kv_pad, kv_pad_rows)
        v = _replace_rows(v, kv_pad, kv_pad_rows)
    qh, kh, vh = (split_heads(t, n_heads) for t in (q, k, v))
    a = attention_weights(qh, kh, mask)
    return merge_heads(a @ vh) @ p["wo"]


def self_attention(x, p, n_heads, mask=NO_MASK, pad=None):
    """Multi-head self-attention over ``B x T x D``; spectral masking swaps Q, K, V for ``pad``."""
    codes = mask.codes(x.shape[0])
    rows = codes == VIEW_CODE["spectral"]
    if pad is None or not rows.any():
        return multi_head(x, x, p, n_heads, mask)
    return multi_head(x, x, p, n_heads, mask, q_pad=pad, q_pad_rows=rows, kv_pad=pad, kv_pad_rows=rows)


def cross_attention(q_src, kv_src, p, n_heads, mask=NO_MASK, pad=None, stream="temporal"):
    """Multi-head cross-attention; masking ``stream`` swaps only its query for ``pad``."""
    codes = mask.codes(q_src.shape[0])
    rows = codes == VIEW_CODE[stream]
    if pad is None or not rows.any():
        return multi_head(q_src, kv_src, p, n_heads, mask)
    return multi_head(q_src, kv_src, p, n_heads, mask, q_pad=pad, q_pad_rows=rows)


def feed_forward(x, p):
    return T.elu(x @ p["ffn.w1"] + p["ffn.b1"]) @ p["ffn.w2"] + p["ffn.b2"]


def _block(x_eff, attn_out, p, eps):
    h = T.layer_norm(x_eff + attn_out, p["ln1.g"], p["ln1.b"], eps)
    return T.layer_norm(h + feed_forward(h, p), p["ln2.g"], p["ln2.b"], eps)


def encoder_layer(views, params, index, mask=NO_MASK):
    """Advance all three streams one layer, each reading the previous layer's features."""
    b, c, n, d = views.shape
    flat = [t.reshape(b, c * n, d) for t in views.as_tuple()]
    codes = mask.codes(b)
    eff = []
    for stream, x, view in zip(STREAMS, flat, ("temporal", "spatial", "spectral")):
        eff.append(_replace_rows(x, params[f"pad.{stream}"], codes == VIEW_CODE[view]))
    tem, spa, spe = eff
    eps = params.ln_eps
    h = params.n_heads

    p_spe = params.layer(index, "spe")
    spe_new = _block(spe, self_attention(spe, p_spe, h, mask, params["pad.spe"]), p_spe, eps)
    p_tem = params.layer(index, "tem")
    tem_new = _block(tem, cross_attention(tem, spe, p_tem, h, mask, params["pad.tem"], "temporal"), p_tem, eps)
    p_spa = params.layer(index, "spa")
    spa_new = _block(spa, cross_attention(spa, spe, p_spa, h, mask, params["pad.spa"], "spatial"), p_spa, eps)
    shape = (b, c, n, d)
    return MultiViewFeatures(tem_new.reshape(shape), spa_new.reshape(shape), spe_new.reshape(shape))


def encoder_forward(views, params, mask=NO_MASK):
    """Apply every encoder layer; the masked view is replaced at each layer."""
    squeeze = views.f_tem.ndim == 3
    if squeeze:
        views = MultiViewFeatures(*(t.reshape((1,) + t.shape) for t in views.as_tuple()))
    for index in range(params.n_layers):
        views = encoder_layer(views, params, index, mask)
    if squeeze:
        views = MultiViewFeatures(*(t.reshape(t.shape[1:]) for t in views.as_tuple()))
    return views


def build_views(batch, params, channel_ids=None, options=None):
    """Convert segmented slices (``B x C x N x D``) into encoder input features."""
    e = params["e_channel"]
    return MultiViewFeatures(
        mv.build_temporal_view(batch, e, params.lt_params("tem"), channel_ids, options),
        mv.build_spatial_view(batch, e, params.lt_params("spa"), channel_ids, options),
        mv.build_spectral_view(batch, e, channel_ids, options),
    )
