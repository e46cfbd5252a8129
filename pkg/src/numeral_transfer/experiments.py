"""Desk-scale experiment protocols shared by the acceptance suite and ``scripts/``."""
from __future__ import annotations

import logging
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, nn
from .data import LabeledDataset, stratified_split
from .synth import generate_synthetic
from .train import RunReport, TrainConfig, fit, sub_seed
from .transfer import REINITIALIZE, TransferConfig, transfer_fit

log = logging.getLogger(__name__)

# Table-1 topology at one eighth of every width: same layer roster, same
# clusters, ~1/60 of the arithmetic. Used where a single CPU core has to run
# hundreds of epochs.
EIGHTH_CONV = (8, 8, 8, 4)
EIGHTH_DENSE = (64, 32, 16)


class _Reached(Exception):
    pass


def overfit_smoke(n_samples: int = 64, max_epochs: int = 300, seed: int = 0,
                  conv=nn.TABLE1_CONV, dense=nn.TABLE1_DENSE, on_epoch=None) -> tuple[int | None, list]:
    """Train on ``n_samples`` synthetic glyphs until every one of them is
    classified correctly (eval mode). Returns (epoch reached or None, records).

    The same samples are tagged as both partitions, so ``fit``'s per-epoch
    evaluation *is* the train-set accuracy without dropout.
    """
    per_class = -(-n_samples // 10)
    pool = generate_synthetic("A", per_class, sub_seed(seed, "synth"))
    pick = np.sort(np.random.default_rng(sub_seed(seed, "subset")).permutation(len(pool))[:n_samples])
    x, y = pool.images[pick], pool.labels[pick]
    ds = LabeledDataset("synthA", np.concatenate([x, x]), np.concatenate([y, y]),
                        np.repeat([False, True], n_samples))
    model = nn.build_model(sub_seed(seed, "init"), conv=conv, dense=dense)
    records = []

    def watch(rec):
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if rec.eval_accuracy == 1.0:
            raise _Reached

    try:
        fit(model, ds, TrainConfig(epochs=max_epochs, seed=seed), on_epoch=watch)
    except _Reached:
        return records[-1].epoch, records
    return None, records


@dataclass
class WarmStartConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    samples_per_class: int = 500
    source_epochs: int = 15
    transfer_epochs: int = 100
    scratch_epochs_at_10: int = 10
    reference_epochs: int = 300
    reference_seed: int = 0
    conv: tuple[int, ...] = EIGHTH_CONV
    dense: tuple[int, ...] = EIGHTH_DENSE
    classifier_init: str = REINITIALIZE

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WarmStartSeed:
    seed: int
    source_best: float
    transfer: RunReport
    scratch: RunReport
    frozen_unchanged: bool

    @property
    def transfer_at_10(self) -> float:
        return self.transfer.accuracy_at_10

    @property
    def scratch_at_10(self) -> float:
        return self.scratch.accuracy_at_10


@dataclass
class WarmStartResult:
    config: WarmStartConfig
    per_seed: list[WarmStartSeed] = field(default_factory=list)
    reference: RunReport | None = None

    @property
    def warm_start_wins(self) -> int:
        return sum(s.transfer_at_10 >= s.scratch_at_10 for s in self.per_seed)

    def parity_gaps(self) -> list[float]:
        ref = self.reference.best_eval_accuracy
        return [s.transfer.best_eval_accuracy - ref for s in self.per_seed]


def script_split(script: str, samples: int, seed: int) -> LabeledDataset:
    ds = generate_synthetic(script, samples, sub_seed(seed, "synth"))
    return stratified_split(ds, 0.2, sub_seed(seed, "split"))


def run_warm_start(cfg: WarmStartConfig, workdir=None, progress=None) -> WarmStartResult:
    """Per seed: train a source model on script A, transfer it to script B
    (frozen features, ``transfer_epochs``), and train the same architecture
    from scratch on B. The reference seed's scratch run lasts
    ``reference_epochs`` and doubles as that seed's 10-epoch baseline (the
    first ten epochs of a deterministic run do not depend on its length)."""
    say = progress or (lambda msg: log.info(msg))
    result = WarmStartResult(cfg)
    fingerprint = nn.architecture_fingerprint(nn.table1_specs(cfg.conv, cfg.dense))["hash"]
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for seed in cfg.seeds:
            a = script_split("A", cfg.samples_per_class, seed)
            b = script_split("B", cfg.samples_per_class, seed)
            init = sub_seed(seed, "init")

            source, src_rep = fit(nn.build_model(init, conv=cfg.conv, dense=cfg.dense), a,
                                  TrainConfig(epochs=cfg.source_epochs, seed=seed))
            ckpt = Path(tmp) / f"source-{seed}.nxfr"
            checkpoint.save(source, {"script": a.name, "seed": seed}, ckpt)
            say(f"seed {seed}: source best {src_rep.best_eval_accuracy:.4f}")

            _, xfer = transfer_fit(TransferConfig(ckpt, b, epochs=cfg.transfer_epochs,
                                                  classifier_init=cfg.classifier_init,
                                                  train=TrainConfig(seed=seed),
                                                  expect_fingerprint=fingerprint))
            say(f"seed {seed}: transfer @10 {xfer.run.accuracy_at_10:.4f} best {xfer.run.best_eval_accuracy:.4f}")

            epochs = cfg.reference_epochs if seed == cfg.reference_seed else cfg.scratch_epochs_at_10
            _, scratch = fit(nn.build_model(init, conv=cfg.conv, dense=cfg.dense), b,
                             TrainConfig(epochs=epochs, seed=seed))
            say(f"seed {seed}: scratch @10 {scratch.accuracy_at_10:.4f} best {scratch.best_eval_accuracy:.4f}"
                f" ({epochs} epochs)")
            if seed == cfg.reference_seed:
                result.reference = scratch
            result.per_seed.append(WarmStartSeed(seed, src_rep.best_eval_accuracy, xfer.run, scratch,
                                                 xfer.frozen_unchanged))
    return result
