"""``numeral-transfer`` command line: train, transfer, matrix, report, pack.

Option values resolve as: command-line flag > ``--config`` file > built-in
default. A config file is either ``key = value`` lines (``#`` starts a comment)
or a ``report.json`` written by an earlier run, whose config echo is reused, so
``train --config runs/x/report.json`` repeats that run exactly.

Exit codes: 0 success, 2 usage/configuration error, 3 data/checkpoint/report
error, 4 internal invariant failure.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checkpoint, nn, report, transfer
from .data import LabeledDataset, load_any, read_archive, stratified_split, write_archive
from .errors import CheckpointError, ConfigError, DatasetError, NumeralTransferError
from .synth import generate_synthetic
from .train import TrainConfig, fit, sub_seed

log = logging.getLogger("numeral_transfer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DATA_ROOT_ENV = "NUMERAL_DATA_ROOT"
TABLE4_PAIRS = (("urdu", "bangla"), ("bangla", "urdu"), ("hindi", "bangla"),
                ("urdu", "hindi"), ("bangla", "hindi"), ("hindi", "urdu"))
DEFAULT_SCRIPTS = ("bangla", "hindi", "urdu")

_TRAIN_DEFAULTS = TrainConfig()
COMMON_OPTIONS = {
    "data": None, "synth": None, "samples": 500,
    "learning_rate": _TRAIN_DEFAULTS.learning_rate, "momentum": _TRAIN_DEFAULTS.momentum,
    "batch_size": _TRAIN_DEFAULTS.batch_size, "dropout_flatten": _TRAIN_DEFAULTS.dropout_flatten,
    "dropout_dense": _TRAIN_DEFAULTS.dropout_dense, "eval_fraction": _TRAIN_DEFAULTS.eval_fraction,
    "seed": 0, "deterministic": True,
}
WIDTH_OPTIONS = {"conv": ",".join(map(str, nn.TABLE1_CONV)), "dense": ",".join(map(str, nn.TABLE1_DENSE))}
TRAIN_OPTIONS = {**COMMON_OPTIONS, **WIDTH_OPTIONS, "epochs": 300}
TRANSFER_OPTIONS = {**COMMON_OPTIONS, "checkpoint": None, "epochs": 100,
                    "classifier": transfer.REINITIALIZE, "allow_any_architecture": False}
MATRIX_OPTIONS = {**COMMON_OPTIONS, **WIDTH_OPTIONS, "source_epochs": 300, "epochs": 100,
                  "classifier": transfer.REINITIALIZE}
MATRIX_OPTIONS.pop("data")
MATRIX_OPTIONS.pop("synth")


# ------------------------------------------------------------ configuration

def _coerce(key, value, default):
    if not isinstance(value, str) or isinstance(default, str) or default is None:
        return value
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return type(default)(value.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from exc


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return dict(doc.get("config", doc))
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve_options(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over the config file over ``defaults``."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    file_cfg.pop("command", None)
    unknown = sorted(set(file_cfg) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    opts = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
        elif key in file_cfg:
            opts[key] = _coerce(key, file_cfg[key], default)
        else:
            opts[key] = default
    return opts


def parse_widths(text, what: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        text = ",".join(map(str, text))
    try:
        widths = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"--{what} expects comma-separated integers, got {text!r}") from exc
    if not widths or min(widths) < 1:
        raise ConfigError(f"--{what} needs at least one positive width, got {text!r}")
    return widths


def train_config(opts: dict, epochs: int) -> TrainConfig:
    return TrainConfig(epochs=epochs, learning_rate=opts["learning_rate"], momentum=opts["momentum"],
                       batch_size=opts["batch_size"], dropout_flatten=opts["dropout_flatten"],
                       dropout_dense=opts["dropout_dense"], eval_fraction=opts["eval_fraction"],
                       seed=opts["seed"], deterministic=opts["deterministic"]).validate()


# ------------------------------------------------------------------ datasets

def resolve_data_path(path) -> Path:
    p = Path(path).expanduser()
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.exists() and not p.is_absolute() and root:
        p = Path(root) / p
    if not p.exists():
        raise DatasetError(f"dataset path {str(path)!r} does not exist"
                           + (f" (also looked under ${DATA_ROOT_ENV}={root})" if root else ""))
    return p


def load_source(opts: dict, data=None, synth=None) -> LabeledDataset:
    """Load (or synthesise) and split a dataset; every seed derives from ``opts['seed']``."""
    if data is None and synth is None:
        data, synth = opts.get("data"), opts.get("synth")
    if (data is None) == (synth is None):
        raise ConfigError("give exactly one of --data PATH or --synth A|B")
    if synth is not None:
        if str(synth).upper() not in ("A", "B"):
            raise ConfigError(f"--synth expects A or B, got {synth!r}")
        if int(opts["samples"]) < 2:
            raise ConfigError("--samples must be at least 2 per class")
        ds = generate_synthetic(str(synth).upper(), int(opts["samples"]), sub_seed(opts["seed"], "synth"))
    else:
        ds = load_any(resolve_data_path(data))
    return stratified_split(ds, opts["eval_fraction"], sub_seed(opts["seed"], "split"))


# -------------------------------------------------------------- experiments

def _echo(opts, keys, command, data, synth, **override) -> dict:
    """The resolved options of one run, restricted to ``command``'s own keys so
    the echo can be fed straight back through ``--config``."""
    echo = {k: opts.get(k, default) for k, default in keys.items()}
    if data is not None or synth is not None:
        echo["data"], echo["synth"] = (None if data is None else str(data)), synth
    echo.update(override)
    return {"command": command, **echo}


def _progress(tag: str, quiet: bool):
    if quiet:
        return None
    def cb(r):
        print(f"[{tag}] epoch {r.epoch:4d}  loss {r.train_loss:.4f}  train {r.train_accuracy:.4f}"
              f"  eval {r.eval_accuracy:.4f}", file=sys.stderr, flush=True)
    return cb


def run_standalone(opts: dict, out_dir, data=None, synth=None, epochs=None, quiet=True) -> dict:
    """Phase one: build, train, write ``model.nxfr`` (best weights) and the report."""
    epochs = opts["epochs"] if epochs is None else epochs
    cfg = train_config(opts, epochs)
    conv, dense = parse_widths(opts["conv"], "conv"), parse_widths(opts["dense"], "dense")
    ds = load_source(opts, data, synth)
    model = nn.build_model(sub_seed(opts["seed"], "init"), conv=conv, dense=dense,
                           dropout_flatten=cfg.dropout_flatten, dropout_dense=cfg.dropout_dense)
    best, run = fit(model, ds, cfg, on_epoch=_progress(ds.name, quiet))
    out = Path(out_dir)
    echo = _echo(opts, TRAIN_OPTIONS, "train", data, synth, epochs=epochs)
    provenance = {"script": ds.name, "seed": opts["seed"], "epochs": epochs,
                  "best_epoch": run.best_epoch, "best_eval_accuracy": run.best_eval_accuracy,
                  "train_config": cfg.to_dict()}
    checkpoint.save(best, provenance, out / "model.nxfr")
    doc = report.run_document(report.STANDALONE, ds.name, run, echo,
                              {"dataset": ds.name, "n_samples": len(ds), "skipped_files": ds.skipped,
                               "param_count": best.param_count(),
                               "fingerprint": best.fingerprint()["hash"],
                               "checkpoint": str(out / "model.nxfr")})
    report.write_run(out, doc)
    return doc


def run_transfer(opts: dict, out_dir, ckpt, data=None, synth=None, expect_fingerprint="table1",
                 quiet=True) -> dict:
    """Phase two: frozen feature extractor, retrained classifier, drift check."""
    cfg = train_config(opts, opts["epochs"])
    if opts["classifier"] not in transfer.CLASSIFIER_MODES:
        raise ConfigError(f"--classifier must be one of {transfer.CLASSIFIER_MODES}")
    ds = load_source(opts, data, synth)
    if expect_fingerprint == "table1":
        expect_fingerprint = None if opts.get("allow_any_architecture") else nn.table1_fingerprint()
    tcfg = transfer.TransferConfig(source_checkpoint=Path(ckpt), target_dataset=ds, epochs=opts["epochs"],
                                   classifier_init=opts["classifier"], train=cfg,
                                   expect_fingerprint=expect_fingerprint)
    best, rep = transfer.transfer_fit(tcfg, on_epoch=_progress(f"{ds.name}<-xfer", quiet))
    out = Path(out_dir)
    echo = _echo(opts, TRANSFER_OPTIONS, "transfer", data, synth, checkpoint=str(ckpt),
                 allow_any_architecture=expect_fingerprint != nn.table1_fingerprint())
    checkpoint.save(best, {"script": ds.name, "transferred_from": rep.source_script,
                           "seed": opts["seed"], "classifier_init": rep.classifier_init,
                           "best_epoch": rep.run.best_epoch, "best_eval_accuracy": rep.run.best_eval_accuracy,
                           "train_config": cfg.to_dict()},
                    out / "model.nxfr")
    doc = report.run_document(report.TRANSFER, f"{rep.source_script}->{ds.name}", rep.run, echo,
                              {**rep.summary(), "checkpoint": str(out / "model.nxfr"),
                               "trainable_params": best.param_count(trainable_only=True)})
    report.write_run(out, doc)
    return doc


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    opts = resolve_options(args, TRAIN_OPTIONS)
    name = f"synth{str(opts['synth']).upper()}" if opts["synth"] else Path(str(opts["data"])).name
    out = Path(args.out or f"runs/train-{name}-s{opts['seed']}")
    doc = run_standalone(opts, out, quiet=args.quiet)
    s = doc["summary"]
    print(f"{doc['name']}: best eval accuracy {s['best_eval_accuracy']:.4f} at epoch {s['best_epoch']}"
          f" ({s['epochs_run']} epochs) -> {out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    opts = resolve_options(args, TRANSFER_OPTIONS)
    if not opts["checkpoint"]:
        raise ConfigError("--checkpoint is required")
    out = Path(args.out or f"runs/transfer-s{opts['seed']}")
    doc = run_transfer(opts, out, opts["checkpoint"], quiet=args.quiet)
    s = doc["summary"]
    print(f"{doc['name']}: best {s['best_eval_accuracy']:.4f} at epoch {s['best_epoch']}, "
          f"after 10 epochs {s['accuracy_at_10'] if s['accuracy_at_10'] is not None else '-'}"
          f", classifier {s['classifier_init']} -> {out}")
    return EXIT_OK


def _registry(args) -> dict:
    if args.synth:
        return {"A": ("synth", "A"), "B": ("synth", "B")}
    entries = args.dataset or list(DEFAULT_SCRIPTS)
    reg = {}
    for e in entries:
        name, _, path = e.partition("=")
        reg[name] = ("data", path or name)
    return reg


def _pairs(args, reg) -> list[tuple[str, str]]:
    if args.pairs:
        pairs = []
        for tok in args.pairs.split(","):
            s, _, t = tok.strip().partition(":")
            if not t:
                raise ConfigError(f"--pairs expects SOURCE:TARGET items, got {tok!r}")
            pairs.append((s, t))
    elif set(reg) == set(DEFAULT_SCRIPTS):
        pairs = list(TABLE4_PAIRS)
    else:
        pairs = list(itertools.permutations(reg, 2))
    for s, t in pairs:
        if s == t:
            raise ConfigError(f"pair {s}:{t} has identical source and target")
        for n in (s, t):
            if n not in reg:
                raise ConfigError(f"pair mentions unregistered script {n!r}")
    return pairs


def _source_kwargs(entry):
    kind, value = entry
    return {"synth": value} if kind == "synth" else {"data": value}


def _matrix_source(job):
    opts, out, entry = job
    return run_standalone(opts, out, epochs=opts["source_epochs"], **_source_kwargs(entry))


def _matrix_pair(job):
    opts, out, ckpt, entry, fingerprint = job
    return run_transfer(opts, out, ckpt, expect_fingerprint=fingerprint, **_source_kwargs(entry))


def _run_jobs(fn, jobs, n_workers, keep_going):
    """Run ``fn`` over ``jobs`` in order; returns a list of (result | exception)."""
    results = [None] * len(jobs)
    if n_workers <= 1:
        for i, job in enumerate(jobs):
            try:
                results[i] = fn(job)
            except Exception as exc:  # noqa: BLE001 - reported per pair
                results[i] = exc
                if not keep_going:
                    break
        return results
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(fn, job) for job in jobs]
        for i, fut in enumerate(futures):
            try:
                results[i] = fut.result()
            except Exception as exc:  # noqa: BLE001
                results[i] = exc
                if not keep_going:
                    for f in futures[i + 1:]:
                        f.cancel()
                    break
    return results


def cmd_matrix(args) -> int:
    opts = resolve_options(args, MATRIX_OPTIONS)
    reg = _registry(args)
    pairs = _pairs(args, reg)
    out = Path(args.out or "runs/matrix")
    fingerprint = nn.architecture_fingerprint(
        nn.table1_specs(parse_widths(opts["conv"], "conv"), parse_widths(opts["dense"], "dense")))["hash"]

    sources = list(dict.fromkeys(s for s, _ in pairs))
    src_results = _run_jobs(_matrix_source, [(opts, out / "standalone" / s, reg[s]) for s in sources],
                            args.jobs, args.keep_going)
    failures = {s: r for s, r in zip(sources, src_results) if not isinstance(r, dict)}

    todo = [(s, t) for s, t in pairs if s not in failures]
    pair_jobs = [(opts, out / "transfer" / f"{s}-to-{t}", out / "standalone" / s / "model.nxfr", reg[t], fingerprint)
                 for s, t in todo]
    pair_results = [] if (failures and not args.keep_going) else _run_jobs(
        _matrix_pair, pair_jobs, args.jobs, args.keep_going)

    rows, first_error = [], next(iter(failures.values()), None)
    for (s, t), r in itertools.zip_longest(todo, pair_results):
        if isinstance(r, dict):
            row = report.matrix_row(r)
            rows.append([s, t] + row[2:])
        else:
            if r is not None:
                print(f"pair {s}->{t} failed: {_describe(r)}", file=sys.stderr)
                first_error = first_error or r
    for s, exc in failures.items():
        print(f"source {s} failed: {_describe(exc)}", file=sys.stderr)
    report.write_text(out / "matrix.csv", report.matrix_csv(rows))
    report.write_text(out / "matrix.json", json.dumps(
        {"command": "matrix", "config": opts, "registry": {k: list(v) for k, v in reg.items()},
         "pairs": [list(p) for p in pairs], "rows": rows,
         "failed": sorted({*failures, *(f"{s}->{t}" for (s, t), r in zip(todo, pair_results)
                                        if not isinstance(r, dict) and r is not None)})},
        indent=2) + "\n")
    table = report.render_matrix(rows)
    report.write_text(out / "matrix.txt", table + "\n")
    print(table)
    if first_error is not None:
        return exit_code(first_error)
    return EXIT_OK


def cmd_report(args) -> int:
    docs = [report.read_run(p) for p in args.reports]
    text = report.render(docs)
    if args.out:
        report.write_text(args.out, text)
    if args.series:
        labels = [f"{d['name']}#{i}" if [x['name'] for x in docs].count(d['name']) > 1 else d["name"]
                  for i, d in enumerate(docs)]
        report.write_text(args.series, report.series_csv(docs, labels))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_pack(args) -> int:
    ds = load_any(resolve_data_path(args.data))
    write_archive(ds, args.out)
    back = read_archive(args.out)
    print(f"packed {len(back)} images ({ds.skipped} skipped) from {args.data} -> {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_common(p, with_source=True):
    p.add_argument("--config", help="key=value file or an earlier report.json (flags take precedence)")
    if with_source:
        src = p.add_argument_group("dataset")
        src.add_argument("--data", help=f"class-labelled directory or .nmds archive (relative paths also "
                                        f"resolve under ${DATA_ROOT_ENV})")
        src.add_argument("--synth", choices=["A", "B", "a", "b"], help="procedural numeral script instead of --data")
    p.add_argument("--samples", type=int, help="synthetic samples per class (default 500)")
    t = p.add_argument_group("training")
    t.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--dropout-flatten", type=float)
    t.add_argument("--dropout-dense", type=float)
    t.add_argument("--eval-fraction", type=float)
    t.add_argument("--seed", type=int, help="root seed; init/shuffle/dropout/synth/split derive from it")
    t.add_argument("--no-deterministic", dest="deterministic", action="store_const", const=False,
                   help="allow multi-threaded BLAS (faster, not bit-reproducible)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-q", "--quiet", action="store_true", help="no per-epoch progress on stderr")


def _add_widths(p):
    p.add_argument("--conv", help="conv filter counts (default 64,64,64,32)")
    p.add_argument("--dense", help="hidden dense widths (default 512,256,128)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="numeral-transfer", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="exit codes: 0 ok, 2 usage, 3 data/checkpoint/report, 4 internal")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", help="phase one: train the network from scratch on one script")
    _add_common(p)
    _add_widths(p)
    p.add_argument("--epochs", type=int, help="default 300")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="phase two: freeze features of a checkpoint, retrain the classifier")
    p.add_argument("--checkpoint", help="NXFR file written by 'train'")
    _add_common(p)
    p.add_argument("--epochs", type=int, help="default 100")
    p.add_argument("--classifier", choices=transfer.CLASSIFIER_MODES, help="default reinitialize")
    p.add_argument("--allow-any-architecture", action="store_const", const=True, default=None,
                   help="accept checkpoints whose architecture is not the Table-1 network")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("matrix", help="train each source, transfer to each target, tabulate")
    reg = p.add_mutually_exclusive_group()
    reg.add_argument("--synth", action="store_true", help="register synthetic scripts A and B")
    reg.add_argument("--dataset", action="append", metavar="NAME[=PATH]",
                     help=f"register a script (repeatable; default bangla, hindi, urdu under ${DATA_ROOT_ENV})")
    p.add_argument("--pairs", help="SOURCE:TARGET[,...] (default: every ordered pair / the Table-4 roster)")
    _add_common(p, with_source=False)
    _add_widths(p)
    p.add_argument("--source-epochs", type=int, help="standalone epochs per source (default 300)")
    p.add_argument("--epochs", type=int, help="transfer epochs per pair (default 100)")
    p.add_argument("--classifier", choices=transfer.CLASSIFIER_MODES)
    p.add_argument("--keep-going", action="store_true", help="continue past failed pairs")
    p.add_argument("--jobs", type=int, default=1, help="run independent runs in N processes")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("report", help="tabulate report.json files; optional epoch series CSV")
    p.add_argument("reports", nargs="*", help="report.json files")
    p.add_argument("--series", help="write an epoch-vs-accuracy CSV here")
    p.add_argument("--out", help="also write the rendered tables here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pack", help="convert a class-labelled directory into an NMDS archive")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)
    return ap


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, (DatasetError, CheckpointError, report.ReportError, OSError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def _describe(exc: BaseException) -> str:
    if isinstance(exc, NumeralTransferError):
        return exc.qualified()
    return f"{type(exc).__name__}: {exc}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "report" and not args.reports:
        parser._subparsers._group_actions[0].choices["report"].print_usage(sys.stderr)
        print("report: error: at least one report.json is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps every failure to an exit code
        print(f"error: {_describe(exc)}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return exit_code(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
