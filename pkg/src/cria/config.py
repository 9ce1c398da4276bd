"""Flat ``key = value`` run configuration.

Every tunable lives in ``DEFAULTS`` with its type and a one-line description.
Values are resolved with precedence command line > config file > default;
unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    default: object
    kind: type
    doc: str


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


FLOATS = "floats"
STRS = "strs"

DEFAULTS = {
    # randomness
    "seed": Key(None, int, "run seed; mandatory for pretrain and finetune"),
    # preprocessing
    "target_rate": Key(200.0, float, "resampling rate in Hz"),
    "band_low": Key(0.5, float, "band-pass lower edge in Hz"),
    "band_high": Key(120.0, float, "band-pass upper edge in Hz, capped at 0.95 x Nyquist"),
    "filter_order": Key(4, int, "Butterworth order"),
    "notch_freqs": Key((1.0, 60.0), FLOATS, "comma-separated notch frequencies in Hz"),
    "notch_1hz": Key(True, bool, "keep the 1 Hz notch"),
    "notch_q": Key(30.0, float, "notch quality factor"),
    "slice_seconds": Key(10.0, float, "slice length in seconds"),
    # synthetic data
    "synth_classes": Key(3, int, "synthetic class count"),
    "synth_channels": Key(8, int, "synthetic channel count"),
    "synth_seconds": Key(10.0, float, "synthetic slice length in seconds"),
    "synth_per_class": Key(300, int, "synthetic slices per class"),
    "synth_snr_db": Key(-8.0, float, "synthetic tone-to-noise ratio in dB"),
    # split
    "val_frac": Key(0.15, float, "validation fraction"),
    "test_frac": Key(0.15, float, "test fraction"),
    "split_seed": Key(0, int, "seed of the train/val/test shuffle"),
    # model
    "d": Key(200, int, "segment length D (model width)"),
    "n_heads": Key(4, int, "attention heads h"),
    "n_layers": Key(2, int, "encoder layers L"),
    "ffn_mult": Key(2, int, "feed-forward expansion factor"),
    "c_max": Key(64, int, "rows of the channel embedding table"),
    "k_c": Key(0, int, "channels kept by purification (0 = ceil(C/2))"),
    "k_t": Key(0, int, "segments kept per channel (0 = ceil(N/2))"),
    "spectral_norm": Key("none", str, "spectral magnitude scaling: none or ortho"),
    # optimization
    "lr": Key(1e-3, float, "Adam learning rate for pre-training"),
    "beta1": Key(0.9, float, "Adam beta1"),
    "beta2": Key(0.999, float, "Adam beta2"),
    "batch_size": Key(8, int, "mini-batch size"),
    "steps": Key(500, int, "optimizer steps"),
    # pre-training
    "temperature": Key(0.2, float, "contrastive temperature T"),
    "per_batch_mask": Key(False, bool, "one masked view per batch instead of per sample"),
    "symmetric_loss": Key(False, bool, "average both contrastive directions"),
    "checkpoint_every": Key(100, int, "pre-training checkpoint period in steps (0 = end only)"),
    # fine-tuning
    "attn_mask_ratio": Key(0.1, float, "attention-value mask ratio during fine-tuning"),
    "loss": Key("ce", str, "ce, bce or focal"),
    "finetune_lr": Key(3e-4, float, "Adam learning rate for fine-tuning"),
    "grad_clip": Key(1.0, float, "global gradient-norm cap in fine-tuning (0 = off)"),
    "focal_gamma": Key(2.0, float, "focal loss gamma"),
    "focal_alpha": Key(0.25, float, "focal loss alpha"),
    "head_hidden": Key(0, int, "head hidden width (0 = D)"),
    "head_dropout": Key(0.1, float, "head input dropout"),
    "freeze_encoder": Key(False, bool, "train the head only"),
    "keep_last_layers": Key(0, int, "use only the last k encoder layers (0 = all)"),
    "freeze_dropped": Key(False, bool, "freeze the unused layers instead of dropping them"),
    "eval_every": Key(50, int, "validation period in fine-tuning steps"),
    # robustness
    "noise_kinds": Key(("gaussian", "impulse", "dropout", "sinusoidal_50hz"), STRS, "noise kinds"),
    "noise_seeds": Key(5, int, "noise seeds per grid cell"),
    "gaussian_sigma": Key((0.1, 0.3, 0.5), FLOATS, "gaussian sigma per level"),
    "impulse_prob": Key((0.001, 0.005, 0.01), FLOATS, "impulse probability per level"),
    "impulse_amplitude": Key((3.0, 5.0, 8.0), FLOATS, "impulse amplitude per level"),
    "dropout_prob": Key((0.05, 0.15, 0.3), FLOATS, "sample dropout probability per level"),
    "sine_amplitude": Key((0.1, 0.3, 0.5), FLOATS, "50 Hz tone amplitude per level"),
}


def coerce(key, value):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = DEFAULTS[key].kind
    if value is None:
        return None
    try:
        if kind is FLOATS:
            return tuple(float(v) for v in value) if isinstance(value, (list, tuple)) else _floats(value)
        if kind is STRS:
            return tuple(str(v) for v in value) if isinstance(value, (list, tuple)) else _strs(value)
        if kind is bool:
            return _bool(value)
        if kind is int and isinstance(value, str):
            return int(value.strip())
        return kind(value.strip() if isinstance(value, str) else value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def parse_config_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


class RunConfig:
    """Resolved settings; attribute access by key name."""

    def __init__(self, values=None):
        self._values = {k: v.default for k, v in DEFAULTS.items()}
        for k, v in (values or {}).items():
            self._values[k] = coerce(k, v)
        self._validate()

    @classmethod
    def resolve(cls, file_values=None, cli_values=None):
        merged = dict(file_values or {})
        merged.update({k: v for k, v in (cli_values or {}).items() if v is not None})
        return cls(merged)

    def _validate(self):
        v = self._values
        if v["spectral_norm"] not in ("none", "ortho"):
            raise ConfigError("spectral_norm must be none or ortho")
        if v["loss"] not in ("ce", "bce", "focal"):
            raise ConfigError("loss must be ce, bce or focal")
        if not v["temperature"] > 0:
            raise ConfigError("temperature must be positive")
        if v["grad_clip"] < 0:
            raise ConfigError("grad_clip must be non-negative")
        if not 0 <= v["attn_mask_ratio"] < 1:
            raise ConfigError("attn_mask_ratio must lie in [0, 1)")
        for key in ("gaussian_sigma", "impulse_prob", "impulse_amplitude", "dropout_prob", "sine_amplitude"):
            if len(v[key]) != 3:
                raise ConfigError(f"{key} needs one value per level (low, mid, high)")

    def __getattr__(self, key):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def __getitem__(self, key):
        return self._values[key]

    def require_seed(self):
        if self._values["seed"] is None:
            raise ConfigError("a seed is required for training commands (--seed or seed = N)")
        return self._values["seed"]

    def as_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self._values.items()}

    @property
    def notch(self):
        freqs = self._values["notch_freqs"]
        if not self._values["notch_1hz"]:
            freqs = tuple(f for f in freqs if f != 1.0)
        return freqs

    def noise_table(self):
        return {
            "gaussian": {"sigma": self.gaussian_sigma},
            "impulse": {"prob": self.impulse_prob, "amplitude": self.impulse_amplitude},
            "dropout": {"prob": self.dropout_prob},
            "sinusoidal_50hz": {"amplitude": self.sine_amplitude},
        }


def describe():
    """Documentation table of every key and its default."""
    rows = []
    for k, v in DEFAULTS.items():
        default = ",".join(str(x) for x in v.default) if isinstance(v.default, tuple) else v.default
        rows.append(f"{k:18s} {str(default):32s} {v.doc}")
    return "\n".join(rows)
