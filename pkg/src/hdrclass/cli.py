"""``hdrclass`` command line.

Exit status: 0 on success, 1 on usage errors (help is printed), 2 when the
input data or a model file is bad.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .dataset import read_csv, stratified_folds, stratified_split, synth_headers, write_csv
from .header_stats import compute_histograms, export_grid
from .manifest import build_manifest, now, write_manifests
from .metrics import ConfusionMatrix, bench_latency, evaluate
from .model import ModelConfig, load_model
from .pcap import ingest, read_pcap, extract_sample
from .trainer import TrainConfig, cross_validate, default_workers, train

log = logging.getLogger("hdrclass")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _pcap_source(text: str) -> tuple[str, str]:
    path, sep, label = text.rpartition(":")
    if not sep or not path or not label:
        raise argparse.ArgumentTypeError(f"expected <path>:<label>, got {text!r}")
    return path, label


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--s", type=int, default=128, help="external memory rows S (default 128)")
    g.add_argument("--d", type=int, default=32, help="embedding dimension D (default 32)")
    g.add_argument("--kernels", type=int, default=64, help="number of conv kernels L (default 64)")
    g.add_argument("--q", type=int, default=3, help="kernel width Q (default 3)")
    g.add_argument("--dropout", type=float, default=0.1, help="dropout probability (default 0.1)")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--dataset", help="dataset CSV")
    g.add_argument("--epochs", type=int, default=200, help="training epochs (default 200)")
    g.add_argument("--lr", type=float, default=0.001, help="Adam learning rate (default 0.001)")
    g.add_argument("--batch", type=int, default=128, help="batch size (default 128)")
    g.add_argument("--beta1", type=float, default=0.9)
    g.add_argument("--beta2", type=float, default=0.999)
    g.add_argument("--eps-adam", type=float, default=1e-8)
    g.add_argument("--early-stop", type=int, default=None, metavar="PATIENCE", help="stop after PATIENCE epochs without improvement")
    g.add_argument("--seed", type=int, default=0, help="seed for init, shuffling, folds and dropout")
    _add_model_flags(p)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command-line flags override it")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = _Parser(prog="hdrclass", description="Traffic classification from 12-byte IPv4 headers.", parents=[common])
    parser.add_argument("--version", action="version", version=f"hdrclass {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("ingest", help="extract labeled header samples from pcap files")
    p.add_argument("--pcap", action="append", type=_pcap_source, default=[], metavar="PATH:LABEL", help="pcap file and its class name (repeatable)")
    p.add_argument("--input-len", type=int, default=12, help="bytes per sample: 12, or 20..1500 (default 12)")
    p.add_argument("--classes", help="comma-separated class order (default: order of first appearance)")
    p.add_argument("--dedup", action="store_true", help="drop repeated (bytes, label) rows")
    p.add_argument("--out", help="dataset CSV to write")
    p.add_argument("--summary", help="IngestSummary JSON (default: <out>.summary.json)")

    p = sub.add_parser("synth", help="generate a synthetic header dataset")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--per-class", type=int, default=5000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--input-len", type=int, default=12)
    p.add_argument("--overlap", action="store_true", help="overlapping classes instead of separable ones")
    p.add_argument("--out", help="dataset CSV to write")

    p = sub.add_parser("stats", help="per-class byte-value histograms")
    p.add_argument("--dataset", help="dataset CSV")
    p.add_argument("--out", help="grid file to write")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("train", help="train a model")
    _add_train_flags(p)
    p.add_argument("--holdout", type=float, default=0.0, help="stratified fraction held out for per-epoch evaluation")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--log", help="per-epoch CSV log")
    p.add_argument("--figure", help="loss/accuracy curve image")

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--workers", type=int, default=None, help="parallel folds (default: $HDRCLASS_THREADS or 1)")
    p.add_argument("--report", help="JSON report")
    p.add_argument("--figure", help="per-fold metrics image")

    p = sub.add_parser("sweep", help="grid over memory rows S and embedding dim D")
    _add_train_flags(p)
    p.set_defaults(s=None, d=None)
    for action in p._actions:
        if action.dest in ("s", "d"):
            action.type = _int_list
            action.help = "comma-separated values"
    p.add_argument("--folds", type=int, default=10, help="held-out fold is the first of this many")
    p.add_argument("--bench-iters", type=int, default=200, help="forward passes timed per grid point")
    p.add_argument("--report", help="JSON report")
    p.add_argument("--figure", help="accuracy heatmap image")

    p = sub.add_parser("eval", help="score a model on a dataset")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--report", help="JSON report (default: stdout)")
    p.add_argument("--confusion-csv", help="confusion matrix CSV (default: <report>.confusion.csv)")
    p.add_argument("--figure", help="confusion matrix image")
    p.add_argument("--bench-iters", type=int, default=0, help="also time this many single-packet forwards")

    p = sub.add_parser("infer", help="predict classes for samples")
    p.add_argument("--model")
    p.add_argument("--csv", help="dataset CSV to classify")
    p.add_argument("--pcap", action="append", default=[], help="pcap file to classify (repeatable)")
    p.add_argument("--label-map", help="comma-separated names replacing the model's class names")
    p.add_argument("--out", help="predictions CSV (default: stdout)")

    p = sub.add_parser("bench", help="single-packet latency benchmark")
    p.add_argument("--model")
    p.add_argument("--dataset", help="samples to feed (default: random bytes)")
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON report (default: stdout)")
    return parser


# -- helpers -------------------------------------------------------------------


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [], "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"hdrclass {args.command}: missing required option(s): {flags}\n\n{args._help}")


def _read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _model_config(args, n: int, t: int, s=None, d=None) -> ModelConfig:
    return ModelConfig(
        n=n,
        d=args.d if d is None else d,
        s=args.s if s is None else s,
        kernels=args.kernels,
        q=args.q,
        t=t,
        dropout_p=args.dropout,
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        eps_adam=args.eps_adam,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        fold_count=getattr(args, "folds", 10),
        early_stop=args.early_stop,
    )


def _emit_json(doc, path):
    text = json.dumps(doc, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_confusion_csv(cm: ConfusionMatrix, names, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(names))
        for name, row in zip(names, cm.counts.tolist()):
            w.writerow([name] + row)


# -- commands --------------------------------------------------------------------


def cmd_ingest(args):
    _require(args, "pcap", "out")
    names = [s.strip() for s in args.classes.split(",")] if args.classes else None
    dataset, summary = ingest(args.pcap, args.input_len, names, workers=default_workers())
    if args.dedup:
        dataset = dataset.deduplicate()
    write_csv(dataset, args.out)
    summary_path = args.summary or f"{args.out}.summary.json"
    with open(summary_path, "w") as fh:
        fh.write(summary.to_json() + "\n")
    log.info("ingested %d samples from %d records", len(dataset), summary.records)
    return [p for p, _ in args.pcap], [args.out, summary_path]


def cmd_synth(args):
    _require(args, "out")
    ds = synth_headers(args.classes, args.per_class, args.seed, args.input_len, separable=not args.overlap)
    write_csv(ds, args.out)
    return [], [args.out]


def cmd_stats(args):
    _require(args, "dataset", "out")
    grid = compute_histograms(read_csv(args.dataset))
    export_grid(grid, args.out, args.format)
    return [args.dataset], [args.out]


def cmd_train(args):
    _require(args, "dataset", "out")
    ds = read_csv(args.dataset)
    train_idx = test_idx = None
    if args.holdout > 0:
        train_idx, test_idx = stratified_split(ds, args.holdout, args.seed)
    result = train(ds, _model_config(args, ds.input_len, ds.n_classes), _train_config(args), train_idx, test_idx, args.log, args.out)
    outputs = [args.out] + [p for p in (args.log,) if p]
    if args.figure:
        from .plotting import plot_history

        plot_history(result.history, args.figure)
        outputs.append(args.figure)
    last = result.history[-1]
    log.info("final epoch %d: loss %.5f train_acc %.4f", last.epoch, last.loss, last.train_acc)
    return [args.dataset], outputs


def cmd_crossval(args):
    _require(args, "dataset", "report")
    ds = read_csv(args.dataset)
    res = cross_validate(ds, _model_config(args, ds.input_len, ds.n_classes), _train_config(args), workers=args.workers)
    _emit_json(res.to_dict(), args.report)
    outputs = [args.report]
    if args.figure:
        from .plotting import plot_folds

        plot_folds(res.folds, args.figure)
        outputs.append(args.figure)
    summary = res.summary()
    print(f"accuracy {summary['accuracy']['mean']:.4f} +- {summary['accuracy']['std']:.4f} over {res.fold_count} folds")
    return [args.dataset], outputs


def cmd_sweep(args):
    _require(args, "dataset", "report")
    ds = read_csv(args.dataset)
    s_vals = args.s or [32, 64, 128, 256]
    d_vals = args.d or [32, 64, 128, 256]
    plan = stratified_folds(ds, args.folds, args.seed)
    tr, te = plan.train_indices(0), plan.test_indices(0)
    rows = []
    for s in s_vals:
        for d in d_vals:
            cfg = _model_config(args, ds.input_len, ds.n_classes, s=s, d=d)
            res = train(ds, cfg, _train_config(args), tr)
            rep = evaluate(res.model, ds, te)
            lat = bench_latency(res.model, ds.x[te[: max(1, args.bench_iters)]], args.bench_iters, min(20, args.bench_iters))
            rows.append({"s": s, "d": d, "accuracy": rep.accuracy, "macro_f1": rep.macro_f1, "forward_mean_ms": lat["forward"].mean_ms})
            log.info("S=%d D=%d accuracy %.4f", s, d, rep.accuracy)
    _emit_json({"held_out_fold": 0, "fold_count": args.folds, "results": rows}, args.report)
    outputs = [args.report]
    if args.figure:
        from .plotting import plot_sweep

        plot_sweep(rows, args.figure)
        outputs.append(args.figure)
    return [args.dataset], outputs


def cmd_eval(args):
    _require(args, "model", "dataset")
    model = load_model(args.model)
    ds = read_csv(args.dataset)
    rep = evaluate(model, ds)
    if args.bench_iters > 0:
        rep.latency = bench_latency(model, ds.x[: min(len(ds), 1000)], args.bench_iters, min(100, args.bench_iters))
    _emit_json(rep.to_dict(), args.report)
    outputs = [args.report] if args.report else []
    cm_path = args.confusion_csv or (f"{args.report}.confusion.csv" if args.report else None)
    if cm_path:
        _write_confusion_csv(rep.confusion, ds.class_names, cm_path)
        outputs.append(cm_path)
    if args.figure:
        from .plotting import plot_confusion

        plot_confusion(rep.confusion.counts, ds.class_names, args.figure)
        outputs.append(args.figure)
    return [args.model, args.dataset], outputs


def cmd_infer(args):
    _require(args, "model")
    if not args.csv and not args.pcap:
        raise UsageError(f"hdrclass infer: give --csv or --pcap\n\n{args._help}")
    model = load_model(args.model)
    names = [s.strip() for s in args.label_map.split(",")] if args.label_map else list(model.class_names)
    if len(names) != model.config.t:
        raise ValueError(f"{len(names)} class names for a {model.config.t}-class model")
    rows, sources = [], []
    if args.csv:
        ds = read_csv(args.csv)
        rows.append(ds.x)
        sources += [f"{args.csv}#{i}" for i in range(len(ds))]
    for path in args.pcap:
        with read_pcap(path) as reader:
            for i, rec in enumerate(reader):
                s = extract_sample(rec, reader.link_type, 0, model.config.n)
                if s is not None:
                    rows.append(np.frombuffer(s.values, dtype=np.uint8)[None, :])
                    sources.append(f"{path}#{i}")
    x = np.concatenate(rows) if rows else np.zeros((0, model.config.n), dtype=np.uint8)
    probs = np.concatenate([model.predict_proba(x[i : i + 1024]) for i in range(0, len(x), 1024)]) if len(x) else np.zeros((0, model.config.t))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "predicted", "predicted_name"] + [f"p_{n}" for n in names])
        for src, p in zip(sources, probs):
            k = int(np.argmax(p))
            w.writerow([src, k, names[k]] + [repr(float(v)) for v in p])
    finally:
        if args.out:
            fh.close()
    return [args.model, args.csv, *args.pcap], [args.out] if args.out else []


def cmd_bench(args):
    _require(args, "model")
    model = load_model(args.model)
    if args.dataset:
        x = read_csv(args.dataset).x[:1000]
    else:
        x = np.random.default_rng(args.seed).integers(0, 256, size=(256, model.config.n))
    stats = bench_latency(model, x, args.iters, args.warmup)
    doc = {"batch_size": 1, "config": model.config.to_dict(), **{k: vars(v) for k, v in stats.items()}}
    _emit_json(doc, args.report)
    return [args.model, args.dataset], [args.report] if args.report else []


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "stats": cmd_stats,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "crossval": cmd_crossval,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def _parse(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("-v", "--verbose", action="store_true")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    sub = parser._subparsers._group_actions[0].choices if parser._subparsers else {}
    if known.config:
        if command not in sub:
            raise UsageError(f"--config needs a subcommand\n\n{parser.format_help()}")
        sub[command].set_defaults(**_read_config(known.config))
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    args._help = sub[args.command].format_help()
    args.verbose = args.verbose or known.verbose
    return args


def _jsonable(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k.startswith("_"):
            continue
        out[k] = [list(x) for x in v] if k == "pcap" and v and isinstance(v[0], tuple) else v
    return out


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = now()
    try:
        inputs, outputs = COMMANDS[args.command](args)
        if outputs:
            write_manifests(build_manifest(args.command, argv, _jsonable(args), getattr(args, "seed", None), inputs, outputs, started))
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return 1
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
