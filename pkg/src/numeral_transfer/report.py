"""Run artifacts (per-epoch CSV, JSON summary with config echo) and the
Table-3 / Table-4 style text renderings built from them."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

from .errors import NumeralTransferError
from .train import EpochRecord, RunReport

SCHEMA = "numeral-transfer/report-v1"
STANDALONE = "standalone"
TRANSFER = "transfer"

EPOCH_COLUMNS = ("epoch", "train_loss", "train_accuracy", "eval_accuracy")
STANDALONE_COLUMNS = ("dataset", "best_accuracy", "epochs", "best_epoch")
MATRIX_COLUMNS = ("source", "destination", "best_accuracy", "best_epoch", "accuracy_at_10")
SERIES_COLUMNS = ("run",) + EPOCH_COLUMNS


class ReportError(NumeralTransferError):
    module = "cli-report"


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------------- writing

def records_csv(records) -> str:
    # repr() round-trips floats exactly, so a re-parsed CSV equals the JSON values
    return _csv_text(EPOCH_COLUMNS, ([r.epoch, repr(r.train_loss), repr(r.train_accuracy),
                                      repr(r.eval_accuracy)] for r in records))


def run_document(kind: str, name: str, run: RunReport, config: dict, extra: dict | None = None) -> dict:
    return {
        "schema": SCHEMA,
        "kind": kind,
        "name": name,
        "config": config,
        "summary": {**run.summary(), **(extra or {})},
        "records": [asdict(r) for r in run.records],
    }


def write_run(out_dir, doc: dict) -> dict[str, Path]:
    """``report.json`` (summary + config echo + records) and ``epochs.csv``."""
    out = Path(out_dir)
    paths = {"json": out / "report.json", "csv": out / "epochs.csv"}
    records = [EpochRecord(**r) for r in doc["records"]]
    _atomic_write_text(paths["csv"], records_csv(records))
    _atomic_write_text(paths["json"], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return paths


# ------------------------------------------------------------------- reading

def read_run(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ReportError(f"cannot read report {str(path)!r}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ReportError(f"{path}: not a run report (schema {doc.get('schema') if isinstance(doc, dict) else None!r})")
    for key in ("kind", "name", "summary", "records"):
        if key not in doc:
            raise ReportError(f"{path}: report lacks {key!r}")
    if doc["kind"] not in (STANDALONE, TRANSFER):
        raise ReportError(f"{path}: unknown report kind {doc['kind']!r}")
    return doc


def read_epochs_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_accuracy"]),
                        float(r["eval_accuracy"])) for r in rows]


# ----------------------------------------------------------------- rendering

def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.2f}%"


def aligned(header, rows) -> str:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows])


def standalone_rows(docs):
    return [[d["name"], d["summary"]["best_eval_accuracy"], d["summary"]["epochs_run"],
             d["summary"]["best_epoch"]] for d in docs]


def matrix_row(doc) -> list:
    s = doc["summary"]
    return [s["source_script"], s["target_script"], s["best_eval_accuracy"], s["best_epoch"],
            s["accuracy_at_10"]]


def matrix_csv(rows) -> str:
    return _csv_text(MATRIX_COLUMNS, ([r[0], r[1], repr(r[2]), r[3], "" if r[4] is None else repr(r[4])]
                                      for r in rows))


def read_matrix_csv(path) -> list[list]:
    with open(path, newline="") as fh:
        return [[r["source"], r["destination"], float(r["best_accuracy"]), int(r["best_epoch"]),
                 None if r["accuracy_at_10"] == "" else float(r["accuracy_at_10"])]
                for r in csv.DictReader(fh)]


def render_standalone(docs) -> str:
    rows = [[n, _pct(b), e, be] for n, b, e, be in standalone_rows(docs)]
    return aligned(["Dataset", "Best accuracy", "Epochs", "Best epoch"], rows)


def render_matrix(rows) -> str:
    return aligned(["Source", "Destination", "Best accuracy", "Best epoch", "Accuracy after 10 epochs"],
                   [[s, t, _pct(b), e, _pct(a10)] for s, t, b, e, a10 in rows])


def render(docs) -> str:
    """Standalone section first, then the transfer section; empty sections are omitted."""
    parts = []
    standalone = [d for d in docs if d["kind"] == STANDALONE]
    transfer = [d for d in docs if d["kind"] == TRANSFER]
    if standalone:
        parts.append("Standalone runs\n" + render_standalone(standalone))
    if transfer:
        parts.append("Transfer runs\n" + render_matrix([matrix_row(d) for d in transfer]))
    return "\n\n".join(parts) + "\n"


def series_csv(docs, labels=None) -> str:
    """Long-format epoch-vs-accuracy series, one block of rows per run."""
    labels = labels or [d["name"] for d in docs]
    rows = []
    for label, d in zip(labels, docs):
        for r in d["records"]:
            rows.append([label, r["epoch"], repr(r["train_loss"]), repr(r["train_accuracy"]),
                         repr(r["eval_accuracy"])])
    return _csv_text(SERIES_COLUMNS, rows)


def write_text(path, text: str) -> None:
    _atomic_write_text(Path(path), text)
