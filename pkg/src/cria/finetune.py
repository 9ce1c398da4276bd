"""Classification head, task losses, and fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import MaskSpec
from .errors import ConfigError, DivergenceError, LabelError
from .model import embed
from .optim import clip_grad_norm


@dataclass
class HeadParams:
    """FC1 -> ELU, then LayerNorm -> FC2 -> ELU, with dropout on the input features."""

    d: int
    hidden: int
    num_classes: int
    dropout: float = 0.1
    ln_eps: float = 1e-5
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least two classes, got {self.num_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def init(cls, d, num_classes, hidden=None, dropout=0.1, rng=None, out_dim=None):
        hidden = hidden or d
        rng = rng if rng is not None else np.random.default_rng(0)
        head = cls(d, hidden, num_classes, dropout)
        # binary tasks trained with BCE/focal use a single score column
        out = out_dim or num_classes
        t = head.tensors
        t["head.fc1.w"] = T.Tensor(rng.normal(0, 1 / np.sqrt(d), (d, hidden)), True, "head.fc1.w")
        t["head.fc1.b"] = T.Tensor(np.zeros(hidden), True, "head.fc1.b")
        t["head.ln.g"] = T.Tensor(np.ones(hidden), True, "head.ln.g")
        t["head.ln.b"] = T.Tensor(np.zeros(hidden), True, "head.ln.b")
        t["head.fc2.w"] = T.Tensor(rng.normal(0, 1 / np.sqrt(hidden), (hidden, out)), True, "head.fc2.w")
        t["head.fc2.b"] = T.Tensor(np.zeros(out), True, "head.fc2.b")
        return head

    def __getitem__(self, name):
        return self.tensors[name]

    def parameters(self):
        return list(self.tensors.values())

    def hyper(self):
        return {
            "d": self.d,
            "hidden": self.hidden,
            "num_classes": self.num_classes,
            "dropout": self.dropout,
            "out_dim": int(self.tensors["head.fc2.b"].shape[0]),
        }


def head_forward(f, head, training=False, rng=None):
    f = T.as_tensor(f)
    if training and head.dropout > 0.0:
        f = T.dropout(f, head.dropout, rng if rng is not None else np.random.default_rng())
    z = T.elu(f @ head["head.fc1.w"] + head["head.fc1.b"])
    z = T.layer_norm(z, head["head.ln.g"], head["head.ln.b"], head.ln_eps)
    return T.elu(z @ head["head.fc2.w"] + head["head.fc2.b"])


def _binary_labels(labels):
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("binary losses need labels in {0, 1}")
    return y


def bce_loss(scores, labels):
    """Mean binary cross-entropy on logits, as softplus((1 - 2y) s)."""
    scores = T.as_tensor(scores)
    y = _binary_labels(labels)
    return T.mean(T.softplus(T.mul(scores, 1.0 - 2.0 * y)))


def focal_loss(scores, labels, gamma=2.0, alpha=0.25):
    """Mean of -alpha_t (1 - p_t)^gamma ln p_t on logits."""
    if gamma < 0 or not 0 < alpha < 1:
        raise ConfigError(f"focal loss needs gamma >= 0 and alpha in (0, 1), got {gamma}, {alpha}")
    scores = T.as_tensor(scores)
    y = _binary_labels(labels)
    nz = T.mul(scores, 1.0 - 2.0 * y)  # -z with z = (2y - 1) s
    nll = T.softplus(nz)  # -ln p_t
    alpha_t = np.where(y == 1, alpha, 1.0 - alpha)
    weight = T.exp(T.scale(T.softplus(T.neg(nz)), -gamma))  # (1 - p_t)^gamma
    return T.mean(T.mul(weight * nll, alpha_t))


def multiclass_ce(scores, labels):
    scores = T.as_tensor(scores)
    labels = np.asarray(labels, dtype=np.int64)
    k = scores.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    picked = T.getitem(T.log_softmax(scores, axis=-1), (np.arange(labels.size), labels))
    return T.neg(T.mean(picked))


def task_loss(scores, labels, kind="ce", gamma=2.0, alpha=0.25):
    if kind == "ce":
        return multiclass_ce(scores, labels)
    # binary losses read the positive-class logit as the score margin
    s = scores if scores.shape[-1] == 1 else scores[:, 1:2] - scores[:, 0:1]
    if kind == "bce":
        return bce_loss(s, labels)
    if kind == "focal":
        return focal_loss(s, labels, gamma, alpha)
    raise ConfigError(f"unknown loss {kind!r}")


def predict_scores(x, params, head, purify=None, options=None, batch_size=64):
    """Evaluation forward: no dropout, no attention masking."""
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            f = embed(x[i : i + batch_size], params, MaskSpec("none"), purify, options)
            out.append(head_forward(f, head, training=False).data)
    if not out:
        return np.zeros((0, head.num_classes))
    return np.concatenate(out, axis=0)


def finetune_step(x, labels, state, attn_mask_ratio=0.1, loss="ce", purify=None, options=None,
                  frozen=(), gamma=2.0, alpha=0.25, grad_clip=None):
    """One supervised step over the encoder and head.

    ``grad_clip`` caps the global gradient norm before the Adam update.
    """
    mask = MaskSpec("none", attn_mask_ratio, rng=state.rng)
    f = embed(x, state.params, mask, purify, options)
    scores = head_forward(f, state.head, training=True, rng=state.rng)
    value_t = task_loss(scores, labels, loss, gamma, alpha)
    value = value_t.item()
    if not np.isfinite(value):
        raise DivergenceError(state.step, value)
    state.optimizer.zero_grad()
    T.backward(value_t)
    if grad_clip:
        clip_grad_norm(state.optimizer.params, grad_clip, skip=frozen)
    state.optimizer.step(frozen)
    state.step += 1
    state.log.append((state.step, value))
    return value


def finetune(x, labels, state, steps, batch_size=16, callback=None, **kw):
    losses = []
    labels = np.asarray(labels)
    for _ in range(steps):
        idx = np.sort(state.rng.choice(len(x), size=min(batch_size, len(x)), replace=False))
        xb = x[idx] if isinstance(x, np.ndarray) else [x[i] for i in idx]
        losses.append(finetune_step(xb, labels[idx], state, **kw))
        if callback is not None:
            callback(state)
    return losses
