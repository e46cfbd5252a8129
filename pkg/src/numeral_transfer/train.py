"""Mini-batch SGD with momentum, per-epoch evaluation and best-weight tracking."""
from __future__ import annotations

import contextlib
import copy
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .data import LabeledDataset
from .errors import ConfigError, DatasetError, ShapeError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def sub_seed(root: int, name: str) -> int:
    """Named child seed of the root seed ("init", "shuffle", "dropout", ...)."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    dropout_flatten: float = nn.DEFAULT_DROPOUT_FLATTEN
    dropout_dense: float = nn.DEFAULT_DROPOUT_DENSE
    eval_fraction: float = 0.2
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "TrainConfig":
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")
        for name in ("dropout_flatten", "dropout_dense"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError(f"eval_fraction must lie in (0, 1), got {self.eval_fraction}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    eval_accuracy: float


@dataclass
class RunReport:
    records: list[EpochRecord]
    best_eval_accuracy: float
    best_epoch: int
    accuracy_at_10: float | None
    wall_time_seconds: float = field(default=0.0, compare=False)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_records(cls, records, wall_time_seconds=0.0, warnings=None) -> "RunReport":
        if not records:
            raise ValueError("a run report needs at least one epoch record")
        best = max(r.eval_accuracy for r in records)
        best_epoch = next(r.epoch for r in records if r.eval_accuracy == best)
        at10 = next((r.eval_accuracy for r in records if r.epoch == 10), None)
        return cls(list(records), best, best_epoch, at10, wall_time_seconds, list(warnings or []))

    def summary(self) -> dict:
        return {"best_eval_accuracy": self.best_eval_accuracy,
                "best_epoch": self.best_epoch,
                "accuracy_at_10": self.accuracy_at_10,
                "epochs_run": len(self.records),
                "wall_time_seconds": self.wall_time_seconds,
                "warnings": list(self.warnings)}


# ------------------------------------------------------------------ pieces

def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -log p[i, label_i], probabilities floored at 1e-12."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(probs):
        raise ShapeError(f"labels shape {labels.shape} does not match probs {probs.shape}")
    if len(labels) and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ConfigError(f"labels must lie in 0..{probs.shape[1] - 1}")
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def zero_velocity(model: nn.Model) -> list:
    return [None if p is None else {k: np.zeros_like(v) for k, v in p.items()} for p in model.params]


def sgd_step(model: nn.Model, grads: list, velocity: list, lr: float, momentum: float):
    """v <- momentum * v - lr * g ; theta <- theta + v, in place, trainable layers only."""
    for i, p in enumerate(model.params):
        if p is None or not model.trainable[i] or grads[i] is None:
            continue
        for k in p:
            g = grads[i][k]
            if g.shape != p[k].shape:
                raise ShapeError(f"layer {i} {k}: gradient shape {g.shape} != parameter shape {p[k].shape}")
            v = velocity[i][k]
            v *= momentum
            v -= lr * g
            p[k] += v
    return model, velocity


def predict(model: nn.Model, images: np.ndarray, batch_size: int = 500, start: int = 0) -> np.ndarray:
    out = []
    for lo in range(0, len(images), batch_size):
        probs, _ = nn.forward(model, images[lo:lo + batch_size], "eval", start=start)
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: nn.Model, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 500, start: int = 0) -> float:
    """Fraction of samples whose argmax prediction (lowest index on ties) is correct."""
    if len(labels) == 0:
        raise DatasetError("cannot evaluate on an empty partition")
    hits = int(np.sum(predict(model, images, batch_size, start) == np.asarray(labels)))
    return hits / len(labels)


def cache_boundary(model: nn.Model) -> int:
    """Length of the leading run of layers whose output can be computed once and
    reused: no trainable parameters, and no dropout except possibly on the last
    one (that dropout is re-applied per batch). Returns 0 when nothing is gained."""
    k = 0
    for i, (spec, p) in enumerate(zip(model.specs, model.params)):
        if p is not None and model.trainable[i]:
            break
        if i > 0 and model.specs[i - 1].dropout_after > 0:
            break
        k = i + 1
    has_params = any(model.params[i] is not None for i in range(k))
    return k if has_params else 0


@contextlib.contextmanager
def _determinism(enabled: bool):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    # a single BLAS thread fixes the summation order of every GEMM
    with threadpool_limits(limits=1):
        yield


# --------------------------------------------------------------------- fit

def fit(model: nn.Model, dataset: LabeledDataset, config: TrainConfig, on_epoch=None):
    """Train for ``config.epochs`` epochs; return the best-eval-accuracy weights
    (earliest epoch on ties) and the run report. The input model is not modified."""
    config.validate()
    if not dataset.is_split:
        raise DatasetError(f"dataset {dataset.name!r} must be split before training")
    x_train, y_train = dataset.train_part()
    x_eval, y_eval = dataset.eval_part()
    if len(y_train) == 0 or len(y_eval) == 0:
        raise DatasetError(f"dataset {dataset.name!r} has an empty train or eval partition")

    warnings = []
    batch_size = config.batch_size
    if batch_size > len(y_train):
        warnings.append(f"batch_size {batch_size} exceeds train partition of {len(y_train)}; clamped")
        log.warning(warnings[-1])
        batch_size = len(y_train)

    work = model.copy().with_dropout(config.dropout_flatten, config.dropout_dense)
    x_train = x_train.astype(work.dtype, copy=False)
    x_eval = x_eval.astype(work.dtype, copy=False)
    shuffle_rng = np.random.default_rng(sub_seed(config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(sub_seed(config.seed, "dropout"))

    t0 = time.perf_counter()
    with _determinism(config.deterministic):
        start = cache_boundary(work)
        if start:
            x_train = nn.forward_features(work, x_train, start)
            x_eval = nn.forward_features(work, x_eval, start)
        velocity = zero_velocity(work)
        records = []
        best_acc, best_params = -1.0, None
        n = len(y_train)
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(n)
            loss_sum, hits = 0.0, 0
            for lo in range(0, n, batch_size):
                idx = order[lo:lo + batch_size]
                yb = y_train[idx]
                probs, trace = nn.forward(work, x_train[idx], "train", dropout_rng, start=start)
                loss_sum += cross_entropy(probs, yb) * len(idx)
                hits += int(np.sum(np.argmax(probs, axis=1) == yb))
                grads = nn.backward(work, trace, yb)
                sgd_step(work, grads, velocity, config.learning_rate, config.momentum)
            acc = evaluate(work, x_eval, y_eval, start=start)
            rec = EpochRecord(epoch, loss_sum / n, hits / n, acc)
            records.append(rec)
            if acc > best_acc:
                best_acc, best_params = acc, copy.deepcopy(work.params)
            if on_epoch is not None:
                on_epoch(rec)
            log.debug("epoch %d loss %.4f train %.4f eval %.4f", epoch, rec.train_loss,
                      rec.train_accuracy, rec.eval_accuracy)
    report = RunReport.from_records(records, time.perf_counter() - t0, warnings)
    best = nn.Model(list(work.specs), best_params, list(work.trainable), tuple(work.input_shape))
    return best, report
