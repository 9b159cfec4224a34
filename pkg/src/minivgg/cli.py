"""Command-line entry point: ``minivgg <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import augment, evaluate, model, storage, trainer
from .errors import MiniVGGError


def _overrides(args, keys) -> dict:
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise MiniVGGError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, keys=("arch", "scale", "seed", "workers")) -> dict:
    return storage.parse_config(args.config, _overrides(args, keys))


def _aug(cfg) -> augment.AugmentConfig:
    return augment.AugmentConfig(cfg["base_size"], cfg["crop_size"], tuple(cfg["scale_set"]), cfg["flip_prob"])


def _arch(cfg, num_classes: int) -> model.ArchConfig:
    try:
        scale = Fraction(cfg["scale"])
    except (ValueError, ZeroDivisionError):
        raise MiniVGGError(f"bad scale {cfg['scale']!r}") from None
    return model.ArchConfig(cfg["arch"], scale, cfg["crop_size"], num_classes, cfg["fc_width"])


def cmd_gen_data(args) -> None:
    total = args.per_class + args.test_per_class
    ds = augment.generate_synthetic(args.classes, total, args.size, args.seed)
    out = Path(args.out)
    if args.test_per_class:
        train, test = augment.split_per_class(ds, args.per_class)
        augment.save_dataset(train, out / "train")
        augment.save_dataset(test, out / "test")
    else:
        augment.save_dataset(ds, out)
    print(f"wrote {len(ds)} images in {args.classes} classes to {out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    aug = _aug(cfg)
    data = augment.load_dataset(args.data, aug.base_size)
    arch = _arch(cfg, data.num_classes)
    init = model.InitSpec(seed=cfg["seed"], std_dev=cfg["init_std"], mode=cfg["init_mode"])
    net = model.build(arch, init, cfg["dropout_ratio"])
    if args.init_from:
        shallow = storage.load_checkpoint(args.init_from)
        net = model.transfer_init(net, shallow)
        print(f"staged init from {args.init_from}: {model.transfer_plan(net, shallow)} + fc6, fc7")
    tcfg = trainer.TrainConfig(
        batch_size=cfg["batch_size"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
        lr_initial=cfg["lr_initial"], lr_gamma=cfg["lr_gamma"], lr_step=cfg["lr_step"],
        max_iter=cfg["max_iter"], seed=cfg["seed"], workers=cfg["workers"], dropout_ratio=cfg["dropout_ratio"])
    out = Path(args.out)

    def checkpoint(it, network):
        # the final checkpoint is written below
        if it < tcfg.max_iter:
            storage.save_checkpoint(network, out.with_name(f"{out.stem}.iter{it}{out.suffix}"))

    def progress(row, network):
        if args.verbose and (row.iter % 100 == 0 or row.iter == tcfg.max_iter - 1):
            print(f"iter {row.iter:6d}  lr {row.lr:.6g}  loss {row.loss:.4f}  top1 {row.top1:.3f}", flush=True)

    _, rows = trainer.train(net, data, tcfg, aug, on_step=progress, on_checkpoint=checkpoint,
                            checkpoint_every=cfg["checkpoint_every"])
    storage.save_checkpoint(net, out)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.csv")
    metrics.write_text(trainer.metrics_csv(rows, timing=not args.no_timing), newline="")
    print(f"trained {arch.arch_name} for {len(rows)} iterations -> {out}")


def cmd_eval(args) -> None:
    net = storage.load_checkpoint(args.checkpoint)
    cfg = _config(args, ())
    data = augment.load_dataset(args.data, cfg["base_size"])
    rep = evaluate.evaluate(net, data, _aug(cfg), ten_view=args.ten_view)
    text = rep.to_csv(data.class_names)
    if args.out:
        Path(args.out).write_text(text, newline="")
    mode = "10-view" if args.ten_view else "center-crop"
    print(f"{mode}: top1 {rep.top1:.4f}  top5 {rep.top5:.4f}  ({rep.sample_count} images)")


def cmd_extract(args) -> None:
    net = storage.load_checkpoint(args.checkpoint)
    cfg = _config(args, ())
    data = augment.load_dataset(args.data, cfg["base_size"])
    fm = evaluate.extract_fc6(net, data, _aug(cfg), ten_view=args.ten_view, post_relu=not args.pre_relu)
    storage.save_features(fm, args.out)
    if len(fm.zero_rows):
        print(f"warning: {len(fm.zero_rows)} all-zero feature rows left unnormalized", file=sys.stderr)
    print(f"wrote {fm.features.shape[0]}x{fm.dim} features to {args.out}")


def cmd_svm_train(args) -> None:
    cfg = _config(args, ("seed",))
    fm = storage.load_features(args.features)
    c = cfg["svm_c"] if args.c is None else args.c
    m = evaluate.svm_train(fm, C=c, steps=cfg["svm_steps"], seed=cfg["seed"])
    storage.save_svm(m, args.out)
    acc = float((evaluate.svm_predict(m, fm)[0] == fm.labels).mean())
    print(f"trained {len(m.weights)} one-vs-rest SVMs (C={c}); training accuracy {acc:.4f}")


def cmd_svm_eval(args) -> None:
    m = storage.load_svm(args.model)
    fm = storage.load_features(args.features)
    pred, _ = evaluate.svm_predict(m, fm)
    acc = float((pred == fm.labels).mean())
    if args.out:
        Path(args.out).write_text(f"metric,value\naccuracy,{acc!r}\nsamples,{len(fm)}\n", newline="")
    print(f"accuracy {acc:.4f} on {len(fm)} samples")


def cmd_describe(args) -> None:
    cfg = _config(args, ("arch", "scale"))
    if args.input is not None:
        cfg["crop_size"] = args.input
    print(model.describe(_arch(cfg, args.classes)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minivgg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, arch=False):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if arch:
            sp.add_argument("--arch", choices=sorted(model.ARCH_NAMES))
            sp.add_argument("--scale", help="width scale, e.g. 1/8")

    sp = sub.add_parser("gen-data", help="write a synthetic PPM dataset")
    sp.add_argument("--classes", type=int, default=8)
    sp.add_argument("--per-class", type=int, default=250)
    sp.add_argument("--test-per-class", type=int, default=0)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a network")
    common(sp, arch=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--init-from", help="checkpoint of a trained shallower network")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    sp.add_argument("--no-timing", action="store_true", help="write 0 in the ms column")
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ten-view", action="store_true")
    sp.add_argument("--out", help="report CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("extract-features", help="write l2-normalized fc6 features")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ten-view", action="store_true")
    sp.add_argument("--pre-relu", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("svm-train", help="train one-vs-rest linear SVMs on a feature file")
    common(sp)
    sp.add_argument("--features", required=True)
    sp.add_argument("--c", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_svm_train)

    sp = sub.add_parser("svm-eval", help="accuracy of an SVM model on a feature file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_svm_eval)

    sp = sub.add_parser("describe", help="print the layer / parameter table")
    common(sp, arch=True)
    sp.add_argument("--classes", type=int, default=205)
    sp.add_argument("--input", type=int)
    sp.set_defaults(func=cmd_describe)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (MiniVGGError, OSError) as exc:
        print(f"minivgg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
