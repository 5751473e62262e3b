"""``binsignal`` command line.

Exit status: 0 on success, 1 when an input cannot be read or parsed, 2 when an
output cannot be written. Usage errors are reported by argparse (status 2).
"""
import argparse
import sys

import numpy as np

from .formats import FormatError, read_signal_file, write_pgm, write_signal_file
from .ingest import IngestError, load_binary, load_manifest
from .metrics import macro_scores, metrics_csv, partial_auc, pr_curve, pr_curve_csv
from .model_builder import build_model, count_macs, count_params, parse_model_name
from .noisebench import NoiseConfig, corpus_noise_table
from .sigproc import FILTERS, ResampleSpec, binary_to_signal, byteplot
from .training import Checkpoint, Recipe, evaluate, load_signals, predict_proba, train

__all__ = ["main", "build_parser"]


class InputFailure(Exception):
    pass


class OutputFailure(Exception):
    pass


def _read(fn, *args):
    try:
        return fn(*args)
    except (IngestError, FormatError, OSError, UnicodeDecodeError) as e:
        raise InputFailure(str(e)) from e


def _write(fn, *args):
    try:
        return fn(*args)
    except OSError as e:
        raise OutputFailure(str(e)) from e


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return

    def put():
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    _write(put)


def _spec(args):
    return ResampleSpec(args.filter)


def cmd_convert(args):
    arr = _read(load_binary, args.in_path, args.format)
    sig = binary_to_signal(arr, args.length, _spec(args))
    _write(write_signal_file, args.out, sig)
    print(f"{args.out}: {args.length} samples from {arr.size} bytes")


def cmd_byteplot(args):
    arr = _read(load_binary, args.in_path, args.format)
    img = byteplot(arr, args.size, _spec(args))
    _write(write_pgm, args.out, img)
    print(f"{args.out}: {args.size}x{args.size} from {arr.size} bytes")


def cmd_noise(args):
    manifest = _read(load_manifest, args.manifest)
    cfg = NoiseConfig(args.target_len, args.image_size, _spec(args), args.format)
    table = corpus_noise_table(manifest, cfg, args.workers)
    for msg in table.failures:
        print(f"skipped {msg}", file=sys.stderr)
    if table.n_files == 0:
        raise InputFailure("no file in the manifest could be processed")
    _write_text(args.out, table.to_csv())


def _model_config(args, class_count=None):
    kw = {}
    if args.input_len is not None:
        kw["input_length"] = args.input_len
    if class_count is not None:
        kw["class_count"] = class_count
    elif args.classes is not None:
        kw["class_count"] = args.classes
    for name in ("base_width", "stem", "activation", "se_ratio", "norm_groups"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "depths", None):
        kw["depths"] = tuple(int(d) for d in args.depths.split(","))
    if getattr(args, "stage_strides", None):
        kw["stage_strides"] = tuple(int(s) for s in args.stage_strides.split(","))
    if getattr(args, "no_square_kernel", False):
        kw["square_kernel"] = False
    if getattr(args, "no_square_stride", False):
        kw["square_stride"] = False
    if getattr(args, "depthwise", False):
        kw["depthwise"] = True
    return parse_model_name(args.model, **kw)


def cmd_count(args):
    args.model = args.model or args.model_pos
    if args.input_len is None:
        args.input_len = args.input_len_pos
    if not args.model:
        raise SystemExit("count: a model name is required")
    cfg = _model_config(args)
    model = build_model(cfg, materialize=False)
    params = count_params(model)
    macs = count_macs(model, cfg.input_length)
    print(f"model: {args.model}")
    print(f"input_length: {cfg.input_length}")
    print(f"class_count: {cfg.class_count}")
    print(f"parameters: {params} ({params / 1e6:.1f} M)")
    print(f"macs: {macs} ({macs / 1e9:.2f} G)")


def _recipe(args):
    kw = {}
    for f in ("learning_rate", "batch_size", "epochs", "weight_decay", "label_smoothing_alpha",
              "class_balance_strength", "finetune_epochs", "finetune_lr_divisor", "warmup_epochs",
              "seed", "balance_mode"):
        v = getattr(args, f)
        if v is not None:
            kw[f] = v
    return Recipe.improved(**kw) if args.recipe == "improved" else Recipe.standard(**kw)


def cmd_train(args):
    train_m = _read(load_manifest, args.train, "train")
    val_m = _read(load_manifest, args.val, "val")
    classes = max(train_m.class_count, val_m.class_count)
    cfg = _model_config(args, classes)
    recipe = _recipe(args)

    def progress(r):
        if not args.quiet:
            print(f"epoch {r.epoch} {r.phase} lr={r.lr:.6g} loss={r.train_loss:.4f} "
                  f"val_f1={r.val_f1:.4f}", file=sys.stderr)

    try:
        ck = train(recipe, train_m, val_m, cfg, progress)
    except (IngestError, FormatError, OSError) as e:
        raise InputFailure(str(e)) from e
    _write(ck.save, args.out)
    _write_text(args.log, ck.log_csv())
    print(f"{args.out}: best epoch {ck.meta['best_epoch']} val_f1 {float(ck.meta['best_val_f1']):.4f}")


def _load_checkpoint(path):
    ck = _read(Checkpoint.load, path)
    try:
        model = ck.model()
    except ValueError as e:
        raise InputFailure(f"{path}: checkpoint does not match its config: {e}") from e
    return ck, model


def cmd_eval(args):
    ck, model = _load_checkpoint(args.checkpoint)
    manifest = _read(load_manifest, args.manifest, "test")
    x, y = _read(load_signals, manifest, ck.config.input_length)
    cm, probs = evaluate(model, x, y, ck.config.class_count, ck.stats)
    f1, p, r = macro_scores(cm)
    _write_text(args.metrics_out, metrics_csv(cm))
    if args.pr_out:
        curve = pr_curve(probs[:, args.positive_class], y, args.positive_class)
        _write_text(args.pr_out, pr_curve_csv(curve))
        if curve.recall[-1] >= 0.5:
            print(f"partial_auc_r0.5: {partial_auc(curve, 0.5)!r}", file=sys.stderr)
    if args.metrics_out not in (None, "-"):
        print(f"macro_f1: {f1!r}\nmacro_precision: {p!r}\nmacro_recall: {r!r}")


def cmd_predict(args):
    ck, model = _load_checkpoint(args.checkpoint)
    n = ck.config.input_length
    if args.format == "signal":
        sig = _read(read_signal_file, args.in_path)
        if len(sig) != n:
            raise InputFailure(f"{args.in_path}: signal length {len(sig)} != model input_length {n}")
        x = np.asarray(sig.samples, dtype=np.float32)
    else:
        arr = _read(load_binary, args.in_path, args.format)
        x = binary_to_signal(arr, n, ResampleSpec(args.filter)).samples.astype(np.float32)
    probs = predict_proba(model, x[None, None, :], ck.stats)[0]
    print(f"label: {int(probs.argmax())}")
    for c, pr in enumerate(probs):
        print(f"p[{c}]: {float(pr)!r}")


def _add_filter(p):
    p.add_argument("--filter", choices=FILTERS, default="lanczos")


def _add_model_flags(p, positional=False):
    if positional:
        p.add_argument("model_pos", nargs="?", metavar="MODEL")
        p.add_argument("input_len_pos", nargs="?", type=int, metavar="INPUT_LEN")
    p.add_argument("--model", default=None if positional else "resnet1dv2-18-se",
                   help="preset name, e.g. resnet1d18, resnet1dv1.5-50, resnet1dv2-152d-se")
    p.add_argument("--input-len", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--base-width", type=int, default=None)
    p.add_argument("--depths", default=None, help="four comma-separated stage depths")
    p.add_argument("--stage-strides", default=None, help="four comma-separated 2D stage strides")
    p.add_argument("--stem", choices=("standard", "deep"), default=None)
    p.add_argument("--activation", choices=("relu", "gelu"), default=None)
    p.add_argument("--se-ratio", type=int, default=None)
    p.add_argument("--norm-groups", type=int, default=None, help="cap on GroupNorm groups per layer")
    p.add_argument("--depthwise", action="store_true")
    p.add_argument("--no-square-kernel", action="store_true")
    p.add_argument("--no-square-stride", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="binsignal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="binary -> signal file")
    p.add_argument("in_path")
    p.add_argument("--format", choices=("raw", "hexbytes"), default="raw")
    p.add_argument("--length", type=int, default=65536)
    _add_filter(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("byteplot", help="binary -> PGM byteplot")
    p.add_argument("in_path")
    p.add_argument("--format", choices=("raw", "hexbytes"), default="raw")
    p.add_argument("--size", type=int, default=256)
    _add_filter(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_byteplot)

    p = sub.add_parser("noise", help="round-trip noise table for a manifest of binaries")
    p.add_argument("manifest")
    p.add_argument("--format", choices=("raw", "hexbytes"), default="raw")
    p.add_argument("--target-len", type=int, default=65536)
    p.add_argument("--image-size", type=int, default=256)
    _add_filter(p)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $BINSIGNAL_WORKERS or 1)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("count", help="parameter and MAC count of a model")
    _add_model_flags(p, positional=True)
    # 47 classes by default: a malware type-classification head
    p.set_defaults(func=cmd_count, classes=47)

    p = sub.add_parser("train", help="train a model on signal-file manifests")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    _add_model_flags(p)
    p.add_argument("--recipe", choices=("standard", "improved"), default="improved")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--label-smoothing-alpha", type=float)
    p.add_argument("--class-balance-strength", type=float)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--finetune-lr-divisor", type=float)
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--balance-mode", choices=("power", "linear"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", required=True, help="epoch log CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--metrics-out", default="-")
    p.add_argument("--pr-out", default=None)
    p.add_argument("--positive-class", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label and class probabilities for one file")
    p.add_argument("checkpoint")
    p.add_argument("in_path")
    p.add_argument("--format", choices=("raw", "hexbytes", "signal"), default="raw")
    _add_filter(p)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except InputFailure as e:
        print(f"binsignal {args.command}: {e}", file=sys.stderr)
        return 1
    except OutputFailure as e:
        print(f"binsignal {args.command}: cannot write output: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"binsignal {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
