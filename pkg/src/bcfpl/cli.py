"""Command-line entry point.

Exit codes: 0 success, 1 data/domain error, 2 usage error. Logs go to
stderr; machine-readable results go to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import load_manifest, split_manifest, write_csv_manifest
from .errors import BcfplError
from .evaluate import (
    bench_throughput,
    evaluate,
    sweep_resolutions,
    write_report,
    write_roc_csv,
    write_sweep_csv,
)
from .imaging import IMAGE_SUFFIXES, LADDER, MODEL_SIDE, degrade, read_image, resize, write_image
from .nn import init_model, param_count
from .train import TrainConfig, train_run, write_epoch_csv

log = logging.getLogger("bcfpl")

DATA_ROOT_ENV = "BCFPL_DATA_ROOT"


def _ladder(text):
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ladder must be comma-separated integers, got {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("ladder entries must be positive")
    return sizes


def _named_path(text):
    name, sep, path = text.partition("=")
    if not sep:
        return Path(text).stem or text, text
    return name, path


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _data_path(path):
    """Resolve a dataset path, falling back to $BCFPL_DATA_ROOT for relative names."""
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and not p.exists() and root:
        return Path(root) / p
    return p


def _add_common(p, k_default=MODEL_SIDE):
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--k", type=_positive, default=k_default,
                   help=f"simulated camera side length in pixels (default: {k_default})")


def _add_train_flags(p, lr=1e-3, epochs=20):
    p.add_argument("--epochs", type=_positive, default=epochs, help=f"training epochs (default: {epochs})")
    p.add_argument("--lr", type=float, default=lr, help=f"initial learning rate (default: {lr:g})")
    p.add_argument("--batch-size", type=_positive, default=128, help="batch size (default: 128)")
    p.add_argument("--weight-decay", type=float, default=0.01, help="AdamW weight decay (default: 0.01)")
    p.add_argument("--halve-every", type=_positive, default=4, help="epochs between lr halvings (default: 4)")
    p.add_argument("--workers", type=_positive, default=1, help="preprocessing threads (default: 1)")


def _add_data(p, flag="--data", required=False, help_text="class-folder root, LABELS text file, or CSV manifest"):
    p.add_argument(flag, required=required and not os.environ.get(DATA_ROOT_ENV),
                   default=os.environ.get(DATA_ROOT_ENV) if flag == "--data" else None,
                   help=f"{help_text} (default: ${DATA_ROOT_ENV})")
    p.add_argument("--image-root", default=None,
                   help="directory that relative image paths in a label file/CSV resolve against")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcfpl", allow_abbrev=False,
                                     description="Low-resolution parking occupancy classifier toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)

    p = command("degrade", "shrink images to k x k and enlarge back to 50 x 50")
    p.add_argument("--in", dest="inp", required=True, help="input image file or directory")
    p.add_argument("--out", required=True, help="output file, or directory when --in is a directory")
    p.add_argument("--side", type=_positive, default=MODEL_SIDE, help="enlarged output side (default: 50)")
    p.add_argument("--no-enlarge", action="store_true", help="write the k x k image without enlarging")
    _add_common(p, 7)

    p = command("scan", "build a manifest from a dataset and optionally split it")
    _add_data(p, required=True)
    p.add_argument("--out", help="write the manifest as CSV (path,label,source)")
    p.add_argument("--n-train", type=int, help="also split: number of training samples")
    p.add_argument("--n-test", type=int, default=0, help="number of test samples for the split")
    p.add_argument("--out-train", help="CSV for the training split")
    p.add_argument("--out-test", help="CSV for the test split")
    _add_common(p)

    p = command("train", "train a model")
    _add_data(p, required=True)
    p.add_argument("--eval-data", help="dataset evaluated after every epoch")
    p.add_argument("--n-train", type=int, help="randomly draw this many training samples from --data")
    p.add_argument("--n-test", type=int, default=0,
                   help="draw this many further samples as the per-epoch test set (when no --eval-data)")
    p.add_argument("--no-attenuation", action="store_true", help="keep the learning rate constant")
    p.add_argument("--out", default="bcfpl.ckpt", help="checkpoint path (default: bcfpl.ckpt)")
    p.add_argument("--log-csv", help="per-epoch log CSV (epoch,lr,train_loss,train_acc,test_acc)")
    _add_common(p)
    _add_train_flags(p)

    p = command("eval", "evaluate a checkpoint: accuracy, AUC, ROC")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    _add_data(p, required=True)
    p.add_argument("--batch-size", type=_positive, default=128, help="batch size (default: 128)")
    p.add_argument("--report", help="write the full report (JSON)")
    p.add_argument("--roc-csv", help="write the ROC curve (threshold,fpr,tpr)")
    _add_common(p)

    p = command("sweep", "train and test at every resolution of a ladder")
    _add_data(p, "--train-data", required=True, help_text="training dataset")
    p.add_argument("--eval", action="append", type=_named_path, required=True, metavar="NAME=PATH",
                   help="evaluation dataset; repeat for several")
    p.add_argument("--n-train", type=int, help="randomly draw this many training samples")
    p.add_argument("--ladder", type=_ladder, default=list(LADDER),
                   help="comma-separated sides (default: %s)" % ",".join(map(str, LADDER)))
    p.add_argument("--out", default="sweep.csv", help="output CSV (resolution,dataset,accuracy,auc,n)")
    _add_common(p)
    _add_train_flags(p)

    p = command("overfit-study", "small constant learning rate, test after every epoch")
    _add_data(p, "--train-data", required=True, help_text="training dataset")
    p.add_argument("--eval-data", required=True, help="dataset tested after every epoch")
    p.add_argument("--n-train", type=int, help="randomly draw this many training samples")
    p.add_argument("--ladder", type=_ladder, help="run once per side; overrides --k")
    p.add_argument("--out", default="overfit.csv",
                   help="per-epoch CSV; with --ladder, one file per side suffixed _k<side>")
    _add_common(p)
    _add_train_flags(p, lr=2e-5, epochs=50)

    p = command("bench", "measure inference throughput on in-memory batches")
    p.add_argument("--checkpoint", help="checkpoint to time (default: freshly initialized model)")
    p.add_argument("--n-images", type=_positive, default=10000, help="images per timed pass (default: 10000)")
    p.add_argument("--batch-size", type=_positive, default=128, help="batch size (default: 128)")
    p.add_argument("--repeats", type=_positive, default=3, help="timed passes after one warm-up (default: 3)")
    p.add_argument("--out", help="also write the result as JSON")
    _add_common(p)
    return parser


def _load(path, image_root=None):
    return load_manifest(_data_path(path), image_root)


def _config(args, attenuation=True):
    return TrainConfig(lr0=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       halve_every=args.halve_every, weight_decay=args.weight_decay, seed=args.seed,
                       k=args.k, attenuation=attenuation, workers=args.workers)


def _maybe_split(m, args):
    if args.n_train is None:
        return m
    return split_manifest(m, args.seed, args.n_train)[0]


def cmd_degrade(args):
    src = Path(args.inp)
    if not src.exists():
        raise BcfplError(f"input {src} does not exist")

    def one(a, b):
        img = read_image(a)
        out = resize(img, args.k, args.k) if args.no_enlarge else degrade(img, args.k, args.side)
        write_image(out, b)

    if src.is_dir():
        dst = Path(args.out)
        count = 0
        for path in sorted(src.rglob("*")):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                target = dst / path.relative_to(src)
                target.parent.mkdir(parents=True, exist_ok=True)
                one(path, target)
                count += 1
        log.info("degraded %d images into %s", count, dst)
    else:
        one(src, args.out)
    return 0


def cmd_scan(args):
    m = _load(args.data, args.image_root)
    summary = {"name": m.name, "n": len(m), **m.counts()}
    if args.out:
        write_csv_manifest(m, args.out)
    if args.n_train is not None:
        train, test = split_manifest(m, args.seed, args.n_train, args.n_test)
        summary.update(n_train=len(train), n_test=len(test))
        if args.out_train:
            write_csv_manifest(train, args.out_train)
        if args.out_test:
            write_csv_manifest(test, args.out_test)
    print(json.dumps(summary))
    return 0


def cmd_train(args):
    data = _load(args.data, args.image_root)
    eval_m = None
    if args.n_train is not None:
        train_m, test_m = split_manifest(data, args.seed, args.n_train, args.n_test)
        eval_m = test_m if len(test_m) else None
    else:
        train_m = data
    if args.eval_data:
        eval_m = _load(args.eval_data, args.image_root)
    config = _config(args, attenuation=not args.no_attenuation)
    log.info("training on %d samples (%s), eval on %s", len(train_m), train_m.counts(),
             "-" if eval_m is None else len(eval_m))
    result = train_run(config, train_m, eval_m)
    save_checkpoint(args.out, result.model, result.optimizer, meta={"config": config.as_dict()})
    if args.log_csv:
        write_epoch_csv(result.logs, args.log_csv)
    last = result.logs[-1]
    print(json.dumps({"checkpoint": str(args.out), "epochs": len(result.logs), "train_loss": last.train_loss,
                      "train_acc": last.train_acc, "test_acc": last.test_acc}))
    return 0


def cmd_eval(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    m = _load(args.data, args.image_root)
    report = evaluate(model, m, args.k, args.batch_size)
    if args.report:
        write_report(report, args.report)
    if args.roc_csv:
        write_roc_csv(report.roc, args.roc_csv)
    c = report.confusion
    print(json.dumps({"dataset": report.name, "resolution": report.resolution, "n": report.n,
                      "accuracy": report.accuracy, "auc": report.auc,
                      "confusion": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}}))
    return 0


def cmd_sweep(args):
    train_m = _maybe_split(_load(args.train_data, args.image_root), args)
    evals = {name: _load(path, args.image_root) for name, path in args.eval}
    rows = []

    def emit(row):
        rows.append(row)
        write_sweep_csv(rows, args.out)  # keep partial results on disk
        log.info("k=%d %s: accuracy=%.4f", row.resolution, row.dataset, row.accuracy)

    sweep_resolutions(_config(args), train_m, evals, args.ladder, on_row=emit)
    write_sweep_csv(rows, args.out)
    print(args.out)
    return 0


def cmd_overfit(args):
    train_m = _maybe_split(_load(args.train_data, args.image_root), args)
    eval_m = _load(args.eval_data, args.image_root)
    ladder = args.ladder or [args.k]
    out = Path(args.out)
    written = []
    for k in ladder:
        config = _config(args, attenuation=False).replace(k=k)
        result = train_run(config, train_m, eval_m)
        path = out if len(ladder) == 1 else out.with_name(f"{out.stem}_k{k}{out.suffix}")
        write_epoch_csv(result.logs, path)
        written.append(str(path))
    print("\n".join(written))
    return 0


def cmd_bench(args):
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)[0]
    else:
        model = init_model(args.seed)
    r = bench_throughput(model, args.n_images, args.batch_size, args.repeats, seed=args.seed)
    doc = {"n_images": r.n_images, "batch_size": r.batch_size, "images_per_second": r.images_per_second,
           "std_images_per_second": r.std_images_per_second, "seconds": r.seconds,
           "parameters": param_count(model)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc))
    return 0


COMMANDS = {
    "degrade": cmd_degrade,
    "scan": cmd_scan,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "overfit-study": cmd_overfit,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in vars(args).items() if k not in ("verbose", "quiet")}
    log.info("config: %s", json.dumps(resolved, default=str, sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except (BcfplError, OSError, FloatingPointError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
