"""Classification metrics, noise injection, and the attention-mask information check."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import EegSlice
from .errors import EmptyTableError, NoiseSpecError, UndefinedMetricError

# ------------------------------------------------------------------ metrics


def confusion_matrix(preds, labels, n_classes=None):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    k = n_classes or int(max(preds.max(initial=0), labels.max(initial=0)) + 1)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def balanced_accuracy(preds, labels, n_classes=None):
    """Mean per-class recall over the classes present in ``labels``."""
    cm = confusion_matrix(preds, labels, n_classes)
    support = cm.sum(axis=1)
    present = support > 0
    if not present.any():
        raise UndefinedMetricError("no samples")
    return float(np.mean(np.diag(cm)[present] / support[present]))


def _binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise UndefinedMetricError("AUROC/PR-AUC need both classes present")
    return scores, labels


def auroc(scores, labels):
    """Rank statistic: P(score_pos > score_neg) with ties counted half."""
    from scipy.stats import rankdata

    scores, labels = _binary(scores, labels)
    ranks = rankdata(scores)  # average ranks resolve ties
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores, labels):
    """Step-wise area under the precision-recall curve (average precision)."""
    scores, labels = _binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # evaluate only at the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def cohens_kappa(preds, labels, n_classes=None):
    cm = confusion_matrix(preds, labels, n_classes).astype(np.float64)
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float(np.sum(cm.sum(axis=0) * cm.sum(axis=1))) / (n * n)
    if p_e == 1.0:
        raise UndefinedMetricError("kappa is undefined when chance agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def weighted_f1(preds, labels, n_classes=None):
    cm = confusion_matrix(preds, labels, n_classes).astype(np.float64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(f1 * support) / support.sum())


@dataclass
class MetricsReport:
    bacc: float
    kappa: float
    f1_weighted: float
    confusion_matrix: np.ndarray
    auroc: float | None = None
    pr_auc: float | None = None

    def as_row(self):
        return {
            "bacc": self.bacc,
            "auroc": self.auroc,
            "pr_auc": self.pr_auc,
            "kappa": self.kappa,
            "f1_weighted": self.f1_weighted,
        }


def metrics_report(scores, labels, n_classes):
    """Full report from class scores (``n x K``, or ``n x 1`` for a binary margin)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 2 and scores.shape[1] > 1:
        preds = scores.argmax(axis=1)
        margin = scores[:, 1] - scores[:, 0] if n_classes == 2 else None
    else:
        margin = scores.reshape(-1)
        preds = (margin > 0).astype(np.int64)
    try:
        kappa = cohens_kappa(preds, labels, n_classes)
    except UndefinedMetricError:
        kappa = float("nan")
    report = MetricsReport(
        bacc=balanced_accuracy(preds, labels, n_classes),
        kappa=kappa,
        f1_weighted=weighted_f1(preds, labels, n_classes),
        confusion_matrix=confusion_matrix(preds, labels, n_classes),
    )
    if margin is not None and 0 < labels.sum() < labels.size:
        report.auroc = auroc(margin, labels)
        report.pr_auc = pr_auc(margin, labels)
    return report


# -------------------------------------------------------------------- noise

NOISE_KINDS = ("gaussian", "impulse", "dropout", "sinusoidal_50hz")
LEVELS = ("none", "low", "mid", "high")

DEFAULT_NOISE_LEVELS = {
    "gaussian": {"sigma": (0.1, 0.3, 0.5)},
    "impulse": {"prob": (0.001, 0.005, 0.01), "amplitude": (3.0, 5.0, 8.0)},
    "dropout": {"prob": (0.05, 0.15, 0.3)},
    "sinusoidal_50hz": {"amplitude": (0.1, 0.3, 0.5)},
}


@dataclass
class NoiseSpec:
    kind: str
    level: str = "low"
    seed: int = 0
    params: dict = field(default_factory=dict)  # explicit values override the level table

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise NoiseSpecError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.level not in LEVELS:
            raise NoiseSpecError(f"unknown noise level {self.level!r}; expected one of {LEVELS}")

    def resolved(self, table=None):
        table = table or DEFAULT_NOISE_LEVELS
        if self.level == "none":
            base = {k: 0.0 for k in table[self.kind]}
        else:
            i = LEVELS.index(self.level) - 1
            base = {k: v[i] for k, v in table[self.kind].items()}
        base.update(self.params)
        return base


def _noise(x, spec, rng, sample_rate, table):
    p = spec.resolved(table)
    if spec.kind == "gaussian":
        return x + p["sigma"] * rng.standard_normal(x.shape)
    if spec.kind == "impulse":
        hit = rng.random(x.shape) < p["prob"]
        sign = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
        return np.where(hit, sign * p["amplitude"], x)
    if spec.kind == "dropout":
        return np.where(rng.random(x.shape) < p["prob"], 0.0, x)
    t = np.arange(x.shape[-1]) / sample_rate
    phase = rng.uniform(0, 2 * np.pi, size=x.shape[:-1] + (1,))
    return x + p["amplitude"] * np.sin(2 * np.pi * 50.0 * t + phase)


def inject_noise(sl, spec: NoiseSpec, sample_rate=200.0, table=None):
    """Corrupt a normalized slice (``EegSlice`` or ``... x L`` array) reproducibly from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if isinstance(sl, EegSlice):
        return replace(sl, data=_noise(sl.data, spec, rng, sl.sample_rate, table))
    return _noise(np.asarray(sl, dtype=np.float64), spec, rng, sample_rate, table)


# --------------------------------------------------- mutual information check


def mi_estimate_discrete(joint_counts):
    """Plug-in mutual information (nats) of an |A| x |X| count table."""
    c = np.asarray(joint_counts, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    n = c.sum()
    if n <= 0:
        raise EmptyTableError("joint count table is empty")
    p = c / n
    pa = p.sum(axis=1, keepdims=True)
    px = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa @ px)[nz])))


def mi_standard_error(joint_counts):
    """Delta-method standard error of the plug-in estimate."""
    c = np.asarray(joint_counts, dtype=np.float64)
    n = c.sum()
    p = c / n
    nz = p > 0
    terms = np.log(p[nz] / (p.sum(axis=1, keepdims=True) @ p.sum(axis=0, keepdims=True))[nz])
    mi = np.sum(p[nz] * terms)
    var = (np.sum(p[nz] * terms**2) - mi**2) / n
    return float(np.sqrt(max(var, 0.0)))


def _joint_counts(a, x, n_a, n_x):
    table = np.zeros((n_a, n_x), dtype=np.int64)
    np.add.at(table, (a, x), 1)
    return table


@dataclass
class MaskMIReport:
    n_trials: int
    passes: int
    mi_full: np.ndarray
    mi_masked: np.ndarray
    tolerance: np.ndarray

    @property
    def pass_rate(self):
        return self.passes / self.n_trials


def mask_mi_inequality_check(n_trials=100, n_samples=100_000, keep_prob=0.5, n_states=4, width=2,
                             n_levels=2, seed=0):
    """Monte Carlo check of I(A * M; X) <= I(A; X) for a random 0/1 mask M independent of X.

    X is uniform over ``n_states``; A = g(X) is a fixed random map into
    ``{1..n_levels}^width``; each entry of M is Bernoulli(``keep_prob``).
    A trial passes when the masked estimate exceeds the full one by at most
    three standard errors.
    """
    rng = np.random.default_rng(seed)
    g = rng.integers(1, n_levels + 1, size=(n_states, width))
    base = n_levels + 1  # symbol alphabet per entry: 0 (masked) and 1..n_levels
    n_sym = base**width
    weights = base ** np.arange(width)
    mi_full = np.empty(n_trials)
    mi_masked = np.empty(n_trials)
    tol = np.empty(n_trials)
    passes = 0
    for i in range(n_trials):
        x = rng.integers(0, n_states, size=n_samples)
        a = g[x]
        m = rng.random(a.shape) < keep_prob
        full = _joint_counts(a @ weights, x, n_sym, n_states)
        masked = _joint_counts((a * m) @ weights, x, n_sym, n_states)
        mi_full[i] = mi_estimate_discrete(full)
        mi_masked[i] = mi_estimate_discrete(masked)
        tol[i] = 3.0 * np.hypot(mi_standard_error(full), mi_standard_error(masked))
        passes += mi_masked[i] <= mi_full[i] + tol[i]
    return MaskMIReport(n_trials, int(passes), mi_full, mi_masked, tol)
