"""Second training phase: reuse a source-script checkpoint, freeze its
convolutional feature extractor and retrain the classifier on a target script."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, nn
from .data import LabeledDataset
from .errors import FrozenDriftError, ModelError
from .train import RunReport, TrainConfig, fit, sub_seed

log = logging.getLogger(__name__)

REINITIALIZE = "reinitialize"
RETAIN = "retain"
CLASSIFIER_MODES = (REINITIALIZE, RETAIN)


def freeze_feature_extractor(model: nn.Model) -> nn.Model:
    """Mark every feature-extractor layer non-trainable (in place; idempotent)."""
    clusters = model.clusters
    if nn.FEATURE_EXTRACTOR not in clusters or nn.CLASSIFIER not in clusters:
        raise ModelError("model lacks the feature-extractor / classifier cluster split")
    for i, c in enumerate(clusters):
        model.trainable[i] = c != nn.FEATURE_EXTRACTOR
    return model


def prepare_classifier(model: nn.Model, mode: str, seed: int) -> nn.Model:
    """Redraw (``reinitialize``) or keep (``retain``) the classifier parameters.
    Feature-extractor parameters are never touched."""
    if mode not in CLASSIFIER_MODES:
        raise ModelError(f"classifier mode must be one of {CLASSIFIER_MODES}, got {mode!r}")
    if mode == RETAIN:
        return model
    rng = np.random.default_rng(seed)
    shapes = nn.param_shapes(model.specs, model.input_shape)
    dtype = model.dtype
    for i, spec in enumerate(model.specs):
        if spec.cluster == nn.CLASSIFIER and shapes[i] is not None:
            model.params[i] = nn.init_layer(spec, shapes[i], rng, dtype)
    return model


def frozen_unchanged(reference: nn.Model, candidate: nn.Model) -> bool:
    """Bitwise equality of every feature-extractor parameter."""
    for i, spec in enumerate(reference.specs):
        if spec.cluster != nn.FEATURE_EXTRACTOR or reference.params[i] is None:
            continue
        for k, v in reference.params[i].items():
            w = candidate.params[i][k]
            if v.dtype != w.dtype or v.shape != w.shape or v.tobytes() != w.tobytes():
                return False
    return True


@dataclass
class TransferConfig:
    source_checkpoint: Path
    target_dataset: LabeledDataset
    epochs: int = 100
    classifier_init: str = REINITIALIZE
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))
    expect_fingerprint: str | None = field(default_factory=nn.table1_fingerprint)


@dataclass
class TransferReport:
    source_script: str
    target_script: str
    run: RunReport
    frozen_unchanged: bool
    classifier_init: str

    def summary(self) -> dict:
        return {"source_script": self.source_script, "target_script": self.target_script,
                "classifier_init": self.classifier_init,
                "frozen_unchanged": self.frozen_unchanged, **self.run.summary()}


def transfer_fit(config: TransferConfig, on_epoch=None):
    """Load -> freeze -> prepare classifier -> fit -> verify frozen layers.

    Returns ``(best_model, TransferReport)``. Raises ``FrozenDriftError`` if any
    feature-extractor parameter differs from the checkpoint after training.
    """
    source, provenance = checkpoint.load(config.source_checkpoint, config.expect_fingerprint)
    train_cfg = TrainConfig.from_dict({**config.train.to_dict(), "epochs": config.epochs}).validate()
    model = freeze_feature_extractor(source.copy())
    prepare_classifier(model, config.classifier_init, sub_seed(train_cfg.seed, "classifier_init"))
    best, run = fit(model, config.target_dataset, train_cfg, on_epoch=on_epoch)
    unchanged = frozen_unchanged(source, best)
    if not unchanged:
        raise FrozenDriftError("feature-extractor parameters drifted during retraining")
    report = TransferReport(source_script=provenance.get("script", "unknown"),
                            target_script=config.target_dataset.name, run=run,
                            frozen_unchanged=unchanged, classifier_init=config.classifier_init)
    return best, report
