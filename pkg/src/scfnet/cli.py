"""``scfnet`` command line: synth, prepare, train, transfer, eval, inspect, augment.

Exit status is 0 on success, 1 for invalid input (one-line message on stderr)
and 2 for failures while running.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .augment import augment_window
from .config import load_config
from .core import Dataset, ValidationError, load_dataset, save_dataset
from .metrics import evaluate, write_roc_csv
from .model import ModelConfig
from .plotting import figure_paths, plot_augment_preview, plot_confusion, plot_losses, plot_roc
from .synth import SynthConfig, class_names, default_freqs, generate
from .train import TrainConfig, default_augment, train_model, transfer_head

log = logging.getLogger("scfnet")


def _require_dir(path, what):
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise ValidationError(f"{what} {p} is not a dataset directory (no manifest.json)")
    return p


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _plan(args, **items):
    print(f"dry run: {args.command}")
    for k, v in items.items():
        print(f"  {k}: {v}")
    return 0


def cmd_synth(args):
    cfg = SynthConfig(
        n_classes=args.classes,
        n_channels=args.channels,
        n_patients=args.patients,
        segments_per_patient=args.segments,
        window_samples=args.window,
        class_freqs_hz=default_freqs(args.classes),
        seed=args.seed,
    ).validate()
    if args.dry_run:
        return _plan(args, out=args.out, segments=cfg.n_patients * cfg.segments_per_patient,
                     shape=f"{cfg.n_channels}x{cfg.window_samples}", classes=class_names(cfg.n_classes))
    ds = generate(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} segments to {args.out}")
    return 0


def cmd_prepare(args):
    src = _require_dir(args.inp, "input")
    run = load_config(args.config)
    pre = run.preprocess
    if args.resample is not None:
        pre.target_rate_hz = args.resample
    if args.window_seconds is not None:
        pre.window_seconds = args.window_seconds
    if args.channels is not None:
        pre.channel_selection = [c.strip() for c in args.channels.split(",") if c.strip()]
    if args.min_votes is not None:
        pre.min_expert_votes = args.min_votes
    if args.oversample:
        pre.oversample = True
    pre.validate()
    ds = load_dataset(src)
    if args.dry_run:
        return _plan(args, input=f"{src} ({len(ds)} segments)", out=args.out, **asdict(pre))
    from .preprocess import prepare

    out = prepare(ds, pre, seed=args.seed)
    save_dataset(out, args.out)
    print(f"wrote {len(out)} segments ({out.n_channels} channels x {out.window_samples} samples) to {args.out}")
    return 0


def _model_config(run, ds: Dataset, arch=None) -> ModelConfig:
    m = dict(run.model)
    if arch is not None:
        m["arch"] = arch
    return ModelConfig(
        n_channels=ds.n_channels, window_samples=ds.window_samples, n_classes=ds.n_classes, **m
    ).validate()


def _train_config(run, args) -> TrainConfig:
    t = dict(run.train)
    if getattr(args, "folds", None) is not None:
        t["k_folds"] = args.folds
    if getattr(args, "seed", None) is not None:
        t["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        t["jobs"] = args.jobs
    cfg = TrainConfig(**t, augment=run.augment)
    return cfg.validate()


def _finish_run(record, out):
    plot_losses(record, Path(out) / "losses.png")
    print(
        f"micro TPR {record.micro_tpr:.4f}  macro AUC {_fmt(record.macro_auc)}  "
        f"micro AUC {_fmt(record.micro_auc)}  total epochs {record.total_epochs}"
    )
    print(f"wrote {Path(out) / 'record.json'}")


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def cmd_train(args):
    src = _require_dir(args.data, "data")
    run = load_config(_require_file(args.config, "config"))
    ds = load_dataset(src)
    mc = _model_config(run, ds, args.arch)
    tc = _train_config(run, args)
    aug = tc.augment or default_augment(mc.window_samples)
    if tc.use_augment:
        aug.validate(mc.n_channels, mc.window_samples)
    if args.dry_run:
        return _plan(args, data=f"{src} ({len(ds)} segments)", out=args.out,
                     model=mc.fingerprint(), train={**asdict(tc), "augment": asdict(aug)})
    record = train_model(ds, mc, tc, out_dir=args.out)
    _finish_run(record, args.out)
    return 0


def cmd_transfer(args):
    src = _require_dir(args.data, "data")
    source = ckpt.load_checkpoint(_require_file(args.extractor, "extractor checkpoint"))
    run = load_config(args.config)
    ds = load_dataset(src)
    # architecture hyperparameters follow the source checkpoint; only the head is new
    base = {k: v for k, v in source.config.fingerprint().items()
            if k not in ("n_channels", "window_samples", "n_classes", "lstm_hidden")}
    base.update(run.model)
    mc = ModelConfig(n_channels=ds.n_channels, window_samples=ds.window_samples,
                     n_classes=ds.n_classes, **base).validate()
    tc = _train_config(run, args)
    if args.dry_run:
        have, want = source.config.extractor_fingerprint(), mc.extractor_fingerprint()
        if have != want:
            raise ValidationError(f"extractor fingerprint mismatch: {have} vs {want}")
        return _plan(args, extractor=args.extractor, data=f"{src} ({len(ds)} segments)",
                     out=args.out, model=mc.fingerprint())
    record = transfer_head(args.extractor, ds, mc, tc, out_dir=args.out)
    _finish_run(record, args.out)
    return 0


def cmd_eval(args):
    params = ckpt.load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    ds = load_dataset(_require_dir(args.data, "data"))
    if args.dry_run:
        return _plan(args, ckpt=args.ckpt, data=f"{args.data} ({len(ds)} segments)", report=args.report,
                     roc_csv=args.roc_csv)
    report = evaluate(params, ds)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    if args.roc_csv and "micro" in report.roc:
        write_roc_csv(report.roc["micro"], args.roc_csv)
    if not args.no_figures:
        paths = figure_paths(out)
        if report.roc:
            plot_roc(report, paths["roc"])
        plot_confusion(report, paths["confusion"])
    print(f"micro TPR {report.micro_tpr:.4f}  macro AUC {_fmt(report.macro_auc)}  "
          f"micro AUC {_fmt(report.micro_auc)}  n={report.n_samples}")
    return 0


def cmd_inspect(args):
    params = ckpt.load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    print("fingerprint: " + json.dumps(params.config.fingerprint(), sort_keys=True))
    for name, t in params.tensors.items():
        print(f"{name}\t{'x'.join(str(d) for d in t.shape) or 'scalar'}")
    return 0


def cmd_augment(args):
    src = _require_dir(args.data, "data")
    run = load_config(args.config)
    ds = load_dataset(src)
    aug = run.augment or default_augment(ds.window_samples)
    aug.validate(ds.n_channels, ds.window_samples)
    if args.preview < 1:
        raise ValidationError("--preview must be >= 1")
    picked = ds.segments[:args.preview]
    if args.dry_run:
        return _plan(args, data=src, out=args.out, preview=len(picked), augment=asdict(aug))
    rng = np.random.default_rng(args.seed)
    segs = []
    for s in picked:
        segs.append(replace(s, id=f"{s.id}_aug", data=augment_window(np.asarray(s.data), aug, rng)))
    out = ds.replace(segs)
    save_dataset(out, args.out)
    if picked:
        plot_augment_preview(picked[0].data, segs[0].data, ds.channel_names, Path(args.out) / "preview.png")
    print(f"wrote {len(segs)} augmented segments to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scfnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        sp.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--channels", type=int, default=16)
    sp.add_argument("--patients", type=int, default=40)
    sp.add_argument("--segments", type=int, default=25, help="segments per patient")
    sp.add_argument("--window", type=int, default=512)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("prepare", cmd_prepare, "resample, select channels, window, filter and balance")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--resample", type=float)
    sp.add_argument("--window-seconds", type=float)
    sp.add_argument("--channels", help="comma-separated channel names, in output order")
    sp.add_argument("--min-votes", type=int)
    sp.add_argument("--oversample", action="store_true")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train", cmd_train, "patient-grouped k-fold training")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--arch", choices=["scfnet", "end2end"], default="scfnet")
    sp.add_argument("--out", required=True)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int)

    sp = add("transfer", cmd_transfer, "head-only fine-tune on a reused extractor")
    sp.add_argument("--extractor", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int)

    sp = add("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--roc-csv")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("inspect", cmd_inspect, "list checkpoint tensors and fingerprint")
    sp.add_argument("--ckpt", required=True)

    sp = add("augment", cmd_augment, "write augmented copies for inspection")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--preview", type=int, required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"scfnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any runtime failure becomes exit 2
        if args.verbose:
            log.exception("command failed")
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"scfnet {args.command}: failed: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
