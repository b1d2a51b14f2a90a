"""Command-line entry point.

Commands: synth, preprocess, train, evaluate, sweep, predict, gradcheck.

Every command accepts ``--config FILE`` holding ``key = value`` lines whose
keys are long flag names (``epochs = 5``, ``stratified = true``); flags given
on the command line override the file. Exit codes: 0 success, 1 usage
error, 2 data/schema error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import data as D
from .errors import AkiError, ConfigError, NumericError
from .evaluation import cross_validate, depth_sweep
from .models import ArchitectureSpec, build_model, load_checkpoint, predict, save_checkpoint, train
from .optim import Hyperparams

EXIT_USAGE = 1
EXIT_DATA = 2


def say(msg, *args):
    """Progress line on standard error; results go to files or standard output."""
    print(msg % args if args else msg, file=sys.stderr, flush=True)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _ratio(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must look like POS:NEG, got {text!r}") from None
    if a < 0 or b < 0 or a + b == 0:
        raise argparse.ArgumentTypeError(f"ratio counts must be nonnegative and not both zero: {text!r}")
    return a, b


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _add_common(p):
    p.add_argument("--config", metavar="FILE", help="key = value file; command-line flags take precedence")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="master seed for every random stream (default 0)")


def _add_source(p, synth_default_n=2000):
    g = p.add_argument_group("data source (a CSV path or synthetic parameters, not both)")
    g.add_argument("--data", metavar="CSV", help="cohort CSV (preprocessed output or raw extract)")
    g.add_argument("--variant", choices=["mimic", "eicu"], help="schema variant; inferred from the header if omitted")
    g.add_argument("--impute", action="store_true", help="median-impute missing features instead of dropping rows")
    g.add_argument("--synth-n", type=_positive_int, help=f"generate a synthetic cohort of this size (e.g. {synth_default_n})")
    g.add_argument("--synth-ratio", type=_ratio, help="synthetic POS:NEG class ratio (default 1:1)")
    g.add_argument("--synth-separation", type=float, help="synthetic class separation (default 2.0)")
    g.add_argument("--synth-nonlinear", type=float, help="synthetic XOR tie probability (default tanh(separation))")
    g.add_argument("--no-smote", action="store_true", help="do not SMOTE-balance a synthetic cohort before use")


def _add_arch(p, family=True):
    g = p.add_argument_group("architecture")
    if family:
        g.add_argument("--family", choices=["vgg", "resnet", "mlp"], default="vgg", help="model family (default vgg)")
        g.add_argument("--depth", type=int, default=8, help="vgg 8/12/16, resnet 18/34, mlp 8/12/16/18/34 (default 8)")
        g.add_argument("--dropout", type=float, default=0.5, help="dropout rate between the FC layers (default 0.5)")
    g.add_argument("--channel-scale", type=_positive_float, default=1.0,
                   help="multiplier on the 2-d block channel plan (default 1.0)")


def _add_hparams(p):
    d = Hyperparams()
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=_positive_float, default=d.learning_rate, help=f"Adam learning rate (default {d.learning_rate})")
    g.add_argument("--batch-size", type=_positive_int, default=d.batch_size, help=f"minibatch size (default {d.batch_size})")
    g.add_argument("--epochs", type=_nonneg_int, default=d.epochs, help=f"training epochs (default {d.epochs})")
    g.add_argument("--beta1", type=float, default=d.adam_beta1, help=f"Adam beta1 (default {d.adam_beta1})")
    g.add_argument("--beta2", type=float, default=d.adam_beta2, help=f"Adam beta2 (default {d.adam_beta2})")
    g.add_argument("--adam-eps", type=_positive_float, default=d.adam_epsilon, help=f"Adam epsilon (default {d.adam_epsilon})")


def _add_cv(p):
    g = p.add_argument_group("cross-validation")
    g.add_argument("--folds", type=_positive_int, default=5, help="number of folds (default 5)")
    g.add_argument("--stratified", action="store_true", help="stratify folds by label")
    g.add_argument("--per-fold-smote", action="store_true",
                   help="SMOTE each training partition instead of the whole dataset up front")
    g.add_argument("--jobs", type=_positive_int, default=1, help="parallel folds; 1 keeps bit-exact serial behavior")
    g.add_argument("--omit-timestamps", action="store_true", help="leave the timestamps block out of the JSON report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="akinet", description="AKI prediction pipeline: synthetic data, preprocessing, CNN training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic cohort CSV")
    _add_common(p)
    p.add_argument("--variant", choices=["mimic", "eicu"], default="mimic", help="schema variant (default mimic)")
    p.add_argument("--n", type=_positive_int, default=2000, help="number of patients (default 2000)")
    p.add_argument("--ratio", type=_ratio, default=(1, 1), help="POS:NEG class ratio, e.g. 2505:158 (default 1:1)")
    p.add_argument("--separation", type=float, default=2.0, help="class separation (default 2.0)")
    p.add_argument("--nonlinear", type=float, help="XOR tie probability (default tanh(separation))")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("preprocess", help="cohort funnel, prevalence filter, encoding and SMOTE")
    _add_common(p)
    p.add_argument("--data", required=True, metavar="CSV", help="raw cohort CSV")
    p.add_argument("--variant", choices=["mimic", "eicu"], help="schema variant; inferred from the header if omitted")
    p.add_argument("--out", required=True, help="balanced output CSV")
    p.add_argument("--report", help="write the funnel report JSON here")
    p.add_argument("--k-neighbors", type=_positive_int, default=5, help="SMOTE neighbors (default 5)")
    p.add_argument("--impute", action="store_true", help="median-impute missing features instead of dropping rows")
    p.add_argument("--no-smote", action="store_true", help="skip SMOTE balancing")
    p.add_argument("--prevalence-threshold", type=float, default=0.2,
                   help="drop lab features present in fewer than this fraction of patients (default 0.2)")

    p = sub.add_parser("train", help="train one model on a whole dataset and save a checkpoint")
    _add_common(p)
    _add_source(p)
    _add_arch(p)
    _add_hparams(p)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")

    p = sub.add_parser("evaluate", help="k-fold cross-validation report (JSON)")
    _add_common(p)
    _add_source(p)
    _add_arch(p)
    _add_hparams(p)
    _add_cv(p)
    p.add_argument("--out", help="report path (default: standard output)")

    p = sub.add_parser("sweep", help="MLP vs CNN depth sweep (JSON grid)")
    _add_common(p)
    _add_source(p)
    _add_arch(p, family=False)
    _add_hparams(p)
    _add_cv(p)
    p.add_argument("--out", help="grid path (default: standard output)")

    p = sub.add_parser("predict", help="score a cohort CSV with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p.add_argument("--data", required=True, metavar="CSV", help="cohort CSV to score")
    p.add_argument("--impute", action="store_true", help="median-impute missing features instead of dropping rows")
    p.add_argument("--out", help="predictions CSV (default: standard output)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and architecture")
    _add_common(p)
    p.add_argument("--widths", default="16,15", help="comma-separated input widths (default 16,15)")
    return parser


def _config_argv(path: str) -> list[str]:
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            out.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            out += [flag, value]
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        # file values first so that explicit flags win
        file_argv = _config_argv(args.config)
        args = parser.parse_args([argv[0]] + file_argv + list(argv[1:]))
    return args


def _hparams(args) -> Hyperparams:
    return Hyperparams(args.lr, args.batch_size, args.epochs, args.beta1, args.beta2, args.adam_eps, args.seed)


def _dataset(args) -> D.Dataset:
    synth_flags = [args.synth_n, args.synth_ratio, args.synth_separation, args.synth_nonlinear]
    if args.data and any(v is not None for v in synth_flags):
        raise UsageError("--data and --synth-* options are mutually exclusive")
    if args.data:
        schema = D.infer_schema(args.data, args.variant)
        ds = D.load_csv(args.data, schema, impute=args.impute)
        say("loaded %d records (%s) from %s", len(ds), schema.variant, args.data)
        return ds
    if args.synth_n is None:
        raise UsageError("give either --data or --synth-n")
    schema = D.schema_for(args.variant or "mimic")
    ds = D.synth_generate(schema, args.synth_n, args.synth_ratio or (1, 1),
                          2.0 if args.synth_separation is None else args.synth_separation,
                          args.seed, args.synth_nonlinear)
    if not args.no_smote and not getattr(args, "per_fold_smote", False):
        ds = D.smote_oversample(ds, seed=args.seed)
    say("synthetic cohort: %d records, classes %s", len(ds), ds.class_counts())
    return ds


def _write_text(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
        say("wrote %s", out)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    ds = D.synth_generate(D.schema_for(args.variant), args.n, args.ratio, args.separation, args.seed, args.nonlinear)
    D.write_csv(args.out, ds)
    say("wrote %d rows (%s) to %s", len(ds), ds.class_counts(), args.out)


def cmd_preprocess(args):
    schema = D.infer_schema(args.data, args.variant)
    rows = D.read_table(args.data, D.demographics_schema(schema.variant))
    ds, report = D.preprocess(rows, schema.variant, impute=args.impute, smote=not args.no_smote,
                              k=args.k_neighbors, seed=args.seed, threshold=args.prevalence_threshold)
    say("cohort funnel: %d input rows", report.input_rows)
    for stage, n in report.excluded.items():
        say("  excluded %-28s %d", stage, n)
    say("  kept %d, SMOTE added %d, output %d %s", report.kept, report.synthetic_added,
             report.output_rows, report.class_counts_after)
    D.write_csv(args.out, ds, include_derived=True)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _spec(args, width) -> ArchitectureSpec:
    return ArchitectureSpec(args.family, args.depth, width, args.channel_scale, args.dropout)


def cmd_train(args):
    h = _hparams(args)
    _spec(args, 16)  # validate before touching data
    ds = _dataset(args)
    spec = _spec(args, ds.schema.width)
    stats = D.fit_normalization(ds, source="full training set")
    model = build_model(spec, args.seed)
    rep = train(model, D.apply_normalization(ds, stats), ds.y, h,
                progress=lambda e, l: say("epoch %d loss %.6f", e + 1, l))
    if rep.diverged:
        raise NumericError("training diverged (non-finite loss)")
    save_checkpoint(args.out, model, stats)
    say("saved checkpoint %s", args.out)


def cmd_evaluate(args):
    h = _hparams(args)
    _spec(args, 16)  # validate before touching data
    ds = _dataset(args)
    spec = _spec(args, ds.schema.width)
    rep = cross_validate(spec, ds, h, args.seed, args.folds, args.stratified,
                         args.per_fold_smote, args.jobs,
                         progress=lambda f: say("fold %d auroc %s", f.index, f.auroc))
    say("mean AUROC %s (std %s, best %s)", rep.mean_auroc, rep.std_auroc, rep.best_auroc)
    _write_text(rep.to_json(include_timestamps=not args.omit_timestamps), args.out)


def cmd_sweep(args):
    h = _hparams(args)
    ds = _dataset(args)
    rep = depth_sweep(ds, h, args.seed, args.folds, args.channel_scale,
                      stratified=args.stratified, jobs=args.jobs,
                      progress=lambda c: say("%s-%d: %s", c.family, c.depth, c.to_dict()))
    _write_text(rep.to_json(include_timestamps=not args.omit_timestamps), args.out)


def cmd_predict(args):
    if not args.checkpoint:
        raise UsageError("checkpoint required: pass --checkpoint PATH")
    model, stats = load_checkpoint(args.checkpoint)
    if stats is None:
        raise ConfigError("checkpoint has no normalization stats")
    schema = D.infer_schema(args.data)
    ds = D.load_csv(args.data, schema, impute=args.impute)
    probs = predict(model, ds, stats)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "probability", "prediction"])
    for r, p in zip(ds.records, probs):
        w.writerow([r.id, repr(float(p)), int(p >= 0.5)])
    _write_text(buf.getvalue(), args.out)


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_suite

    try:
        widths = tuple(int(w) for w in args.widths.split(","))
    except ValueError:
        raise UsageError(f"--widths must be comma-separated integers, got {args.widths!r}") from None
    rows = run_suite(args.seed, widths)
    failed = 0
    sys.stdout.write(f"{'check':30s} {'max_rel_error':>14s}  status\n")
    for name, err in rows:
        ok = err <= TOLERANCE
        failed += not ok
        sys.stdout.write(f"{name:30s} {err:14.3e}  {'ok' if ok else 'FAIL'}\n")
    if failed:
        raise NumericError(f"{failed} gradient check(s) above {TOLERANCE}")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except AkiError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
