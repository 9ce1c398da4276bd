"""Command-line entry point.

Subcommands: preprocess, pretrain, finetune, evaluate, robustness, dump-features.
Exit codes: 0 ok, 2 configuration error, 3 data or checkpoint error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
import zlib

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, encoder_from, from_state, head_from
from .config import RunConfig, describe, load_config_file, parse_config_text
from .dataset import SliceDataset, SyntheticSpec, generate_synthetic_dataset, split_indices
from .dsp import EegRecording, preprocess_recording
from .edf import parse_edf
from .encoder import MaskSpec, EncoderParams, build_views, encoder_layer
from .errors import (
    CheckpointError,
    ConfigError,
    CutoffError,
    DataFormatError,
    DivergenceError,
    EmptySignalError,
    NoiseSpecError,
    ParseError,
    TooShortError,
)
from .evaluation import LEVELS, NoiseSpec, inject_noise, metrics_report
from .finetune import HeadParams, finetune, predict_scores
from .multiview import ViewOptions
from .optim import Adam, TrainState
from .pretrain import pretrain
from .purification import PurifyConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def substream(seed, name):
    """Independent generator for one named consumer of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------- helpers


def segment_dataset(ds, d):
    """``n x C x L`` float32 slices -> ``n x C x N x D`` float64 segments."""
    n, c, length = ds.data.shape
    if length < d:
        raise TooShortError(f"slice length {length} is shorter than segment length {d}")
    segs = length // d
    return ds.data[:, :, : segs * d].astype(np.float64).reshape(n, c, segs, d)


def load_dataset(path):
    try:
        return SliceDataset.load(path)
    except FileNotFoundError:
        raise DataFormatError(f"dataset not found: {path}") from None


def splits(ds, cfg):
    return split_indices(len(ds), np.random.default_rng(cfg.split_seed), cfg.val_frac, cfg.test_frac)


def model_options(cfg):
    purify = PurifyConfig(cfg.k_c or None, cfg.k_t or None)
    return purify, ViewOptions(spectral_norm=cfg.spectral_norm)


def model_cfg(ckpt, cfg):
    """Settings baked into a checkpoint win for model-shaping keys."""
    saved = ckpt.meta.get("config", {})
    keys = ("d", "k_c", "k_t", "spectral_norm")
    return RunConfig({**cfg.as_dict(), **{k: saved[k] for k in keys if k in saved}})


# --------------------------------------------------------------- commands


def cmd_preprocess(args, cfg):
    if args.synthetic:
        spec = SyntheticSpec(cfg.synth_classes, cfg.synth_channels, cfg.synth_seconds, cfg.target_rate,
                             cfg.synth_per_class, cfg.seed if cfg.seed is not None else 0,
                             snr_db=cfg.synth_snr_db)
        ds = generate_synthetic_dataset(spec)
        ds.save(args.out)
        print(f"wrote {len(ds)} synthetic slices to {args.out}")
        return EXIT_OK
    if not args.inputs:
        raise ConfigError("preprocess needs input files or --synthetic")
    labels = list(args.labels or [])
    if labels and len(labels) != len(args.inputs):
        raise ConfigError("--labels needs one label per input")
    names, data, out_labels = None, [], []
    for i, path in enumerate(args.inputs):
        label = labels[i] if labels else 0
        for rec, lab in _recordings(path, label):
            slices = preprocess_recording(
                rec,
                target_rate=cfg.target_rate,
                band=(cfg.band_low, cfg.band_high),
                order=cfg.filter_order,
                notch_freqs=cfg.notch,
                notch_q=cfg.notch_q,
                slice_seconds=cfg.slice_seconds,
                label=lab,
            )
            for s in slices:
                if names is None:
                    names = [n.upper() for n in s.channel_names]
                elif [n.upper() for n in s.channel_names] != names:
                    raise DataFormatError(f"{path}: channel names differ from the first input")
                data.append(s.data)
                out_labels.append(lab)
    if names is None:
        raise DataFormatError("inputs produced no complete slices")
    n_classes = max(int(max(out_labels)) + 1, 2)
    ds = SliceDataset(names, cfg.target_rate, n_classes, np.stack(data), np.asarray(out_labels))
    ds.save(args.out)
    print(f"wrote {len(ds)} slices to {args.out}")
    return EXIT_OK


def _recordings(path, label):
    if str(path).lower().endswith(".edf"):
        yield parse_edf(path), label
        return
    ds = load_dataset(path)
    for x, lab in zip(ds.data, ds.labels):
        yield EegRecording(list(ds.channel_names), ds.sample_rate, x.astype(np.float64)), int(lab)


def cmd_pretrain(args, cfg):
    seed = cfg.require_seed()
    ds = load_dataset(args.data)
    train, _, _ = splits(ds, cfg)
    x = segment_dataset(ds, cfg.d)[train]
    c_max = max(cfg.c_max, ds.n_channels)
    params = EncoderParams.init(cfg.d, cfg.n_heads, cfg.n_layers, c_max, cfg.ffn_mult, substream(seed, "init"))
    state = TrainState(params, Adam(params.tensors, cfg.lr, (cfg.beta1, cfg.beta2)), substream(seed, "pretrain"))
    purify, options = model_options(cfg)
    meta = {"stage": "pretrain", "config": cfg.as_dict(), "channel_names": list(ds.channel_names)}
    rows = []

    def on_step(st):
        step, loss, hist = st.log[-1]
        rows.append((step, loss, hist["temporal"], hist["spatial"], hist["spectral"]))
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            from_state(st, meta).save(args.out)

    try:
        pretrain(x, state, cfg.steps, cfg.batch_size, cfg.temperature, purify, options,
                 cfg.per_batch_mask, cfg.symmetric_loss, on_step)
    finally:
        if args.log:
            write_csv(args.log, ["step", "loss", "masked_temporal", "masked_spatial", "masked_spectral"], rows)
    from_state(state, meta).save(args.out)
    if rows:
        print(f"pretrained {cfg.steps} steps, final loss {rows[-1][1]:.4f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_finetune(args, cfg):
    seed = cfg.require_seed()
    ds = load_dataset(args.data)
    train, val, _ = splits(ds, cfg)
    xs = segment_dataset(ds, cfg.d)
    if args.init:
        ckpt = Checkpoint.load(args.init)
        cfg = model_cfg(ckpt, cfg)
        xs = segment_dataset(ds, cfg.d)
        params = encoder_from(ckpt)
    else:
        c_max = max(cfg.c_max, ds.n_channels)
        params = EncoderParams.init(cfg.d, cfg.n_heads, cfg.n_layers, c_max, cfg.ffn_mult, substream(seed, "init"))
    frozen = set()
    if cfg.keep_last_layers:
        if cfg.freeze_dropped:
            first = params.n_layers - cfg.keep_last_layers
            frozen |= {k for k in params.tensors if k.startswith("layer") and int(k[5:].split(".")[0]) < first}
        else:
            params.keep_last_layers(cfg.keep_last_layers)
    if cfg.freeze_encoder:
        frozen |= set(params.tensors)
    head = HeadParams.init(cfg.d, ds.n_classes, cfg.head_hidden or None, cfg.head_dropout, substream(seed, "head"))
    named = {**params.tensors, **head.tensors}
    state = TrainState(params, Adam(named, cfg.finetune_lr, (cfg.beta1, cfg.beta2)), substream(seed, "finetune"),
                       head=head)
    purify, options = model_options(cfg)
    rows, window = [], []

    def on_step(st):
        window.append(st.log[-1][1])
        if cfg.eval_every and (st.step % cfg.eval_every == 0 or st.step == cfg.steps):
            row = [st.step, float(np.mean(window)), None, None, None]
            if len(val):
                r = metrics_report(predict_scores(xs[val], params, head, purify, options), ds.labels[val],
                                   ds.n_classes)
                row[2:] = [r.bacc, r.kappa, r.auroc]
            rows.append(row)
            window.clear()

    try:
        finetune(xs[train], ds.labels[train], state, cfg.steps, cfg.batch_size, on_step,
                 attn_mask_ratio=cfg.attn_mask_ratio, loss=cfg.loss, purify=purify, options=options,
                 frozen=frozen, gamma=cfg.focal_gamma, alpha=cfg.focal_alpha, grad_clip=cfg.grad_clip)
    finally:
        if args.log:
            write_csv(args.log, ["step", "loss", "val_bacc", "val_kappa", "val_auroc"], rows)
    meta = {"stage": "finetune", "config": cfg.as_dict(), "channel_names": list(ds.channel_names)}
    from_state(state, meta).save(args.out)
    print(f"fine-tuned {cfg.steps} steps; checkpoint written to {args.out}")
    return EXIT_OK


def _load_classifier(path, cfg):
    ckpt = Checkpoint.load(path)
    head = head_from(ckpt)
    if head is None:
        raise CheckpointError(f"{path} has no classification head; run finetune first")
    return encoder_from(ckpt), head, model_cfg(ckpt, cfg)


def _pick(ds, cfg, split):
    if split == "all":
        return np.arange(len(ds))
    train, val, test = splits(ds, cfg)
    return {"train": train, "val": val, "test": test}[split]


def _print_report(report, title):
    print(title)
    for k, v in report.as_row().items():
        print(f"  {k:12s} {'n/a' if v is None else f'{v:.4f}'}")
    print("  confusion matrix (rows = true class):")
    for row in report.confusion_matrix:
        print("   " + " ".join(f"{int(v):6d}" for v in row))


def cmd_evaluate(args, cfg):
    ds = load_dataset(args.data)
    params, head, cfg = _load_classifier(args.checkpoint, cfg)
    idx = _pick(ds, cfg, args.split)
    purify, options = model_options(cfg)
    x = segment_dataset(ds, cfg.d)[idx]
    report = metrics_report(predict_scores(x, params, head, purify, options), ds.labels[idx], ds.n_classes)
    _print_report(report, f"{args.split} split, {len(idx)} slices")
    if args.out:
        write_csv(args.out, ["metric", "value"], list(report.as_row().items()))
    return EXIT_OK


def cmd_robustness(args, cfg):
    ds = load_dataset(args.data)
    params, head, cfg = _load_classifier(args.checkpoint, cfg)
    idx = _pick(ds, cfg, args.split)
    purify, options = model_options(cfg)
    raw = ds.data[idx].astype(np.float64)
    labels = ds.labels[idx]
    table = cfg.noise_table()
    rows = []
    for kind in cfg.noise_kinds:
        for level in LEVELS:
            for s in range(cfg.noise_seeds):
                spec = NoiseSpec(kind, level, seed=s)
                noisy = inject_noise(raw, spec, ds.sample_rate, table)
                sub = SliceDataset(ds.channel_names, ds.sample_rate, ds.n_classes, noisy, labels)
                x = segment_dataset(sub, cfg.d)
                r = metrics_report(predict_scores(x, params, head, purify, options), labels, ds.n_classes)
                rows.append((kind, level, s, r.bacc, r.kappa, r.f1_weighted))
    print(f"{'kind':16s} " + " ".join(f"{lv:>8s}" for lv in LEVELS) + "   (mean BACC)")
    for kind in cfg.noise_kinds:
        means = [np.mean([r[3] for r in rows if r[0] == kind and r[1] == lv]) for lv in LEVELS]
        print(f"{kind:16s} " + " ".join(f"{m:8.4f}" for m in means))
    if args.out:
        write_csv(args.out, ["kind", "level", "seed", "bacc", "kappa", "f1_weighted"], rows)
    return EXIT_OK


def cmd_dump_features(args, cfg):
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = model_cfg(ckpt, cfg)
    params = encoder_from(ckpt)
    ds = load_dataset(args.data)
    if not 0 <= args.index < len(ds):
        raise DataFormatError(f"slice index {args.index} out of range for {len(ds)} slices")
    _, options = model_options(cfg)
    x = segment_dataset(ds, cfg.d)[args.index : args.index + 1]
    rows = []
    with T.no_grad():
        views = build_views(x, params, None, options)
        stages = [("input", views)]
        for i in range(params.n_layers):
            views = encoder_layer(views, params, i, MaskSpec("none"))
            stages.append((f"layer{i}", views))
    for stage, v in stages:
        for stream, t in zip(("temporal", "spatial", "spectral"), v.as_tuple()):
            arr = t.data[0]
            for c in range(arr.shape[0]):
                for n in range(arr.shape[1]):
                    rows.append([stage, stream, c, n, *arr[c, n]])
    header = ["stage", "view", "channel", "segment"] + [f"f{j}" for j in range(cfg.d)]
    write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int, help="run seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="cria", description="Multi-view EEG encoder: preprocessing, training, "
                                     "evaluation.", epilog="Exit codes: 0 ok, 2 config, 3 data, 4 divergence.")
    parser.add_argument("--list-config", action="store_true", help="print every config key with its default")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="EDF or slice files -> normalized slice dataset")
    _common(p)
    p.add_argument("inputs", nargs="*", help="EDF (.edf) or slice (.cria) files")
    p.add_argument("--labels", type=int, nargs="*", help="class label per input file")
    p.add_argument("--synthetic", action="store_true", help="generate the synthetic spectral-mixture dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="view-masked contrastive pre-training")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="per-step CSV log")

    p = sub.add_parser("finetune", help="supervised training from a checkpoint or from scratch")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="pre-trained checkpoint (omit to train from scratch)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="validation metrics CSV")

    for name, helptext in (("evaluate", "metrics on a held-out split"),
                           ("robustness", "metrics under the noise grid")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
        p.add_argument("--out", help="CSV output")

    p = sub.add_parser("dump-features", help="per-layer view features of one slice as CSV")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args):
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    cli = parse_config_text("\n".join(getattr(args, "set", []) or []))
    for key in ("seed", "steps"):
        if getattr(args, key, None) is not None:
            cli[key] = getattr(args, key)
    return RunConfig.resolve(file_values, cli)


COMMANDS = {
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
    "dump-features": cmd_dump_features,
}


def run_command(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if args.list_config:
        print(describe())
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, NoiseSpecError, CutoffError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ParseError, CheckpointError, TooShortError, EmptySignalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
