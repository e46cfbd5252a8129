"""Layered model: layer descriptors, parameter storage with trainable flags,
train/eval forward pass and backpropagation of mean cross-entropy."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ModelError, ShapeError, TraceError

CONV = "conv3x3"
POOL = "maxpool2x2"
FLATTEN = "flatten"
DENSE = "dense"
OUTPUT = "output"
KINDS = (CONV, POOL, FLATTEN, DENSE, OUTPUT)

FEATURE_EXTRACTOR = "feature_extractor"
CLASSIFIER = "classifier"

ELU, SOFTMAX, NONE = "elu", "softmax", "none"

INPUT_SHAPE = (1, 32, 32)
N_CLASSES = 10
TABLE1_CONV = (64, 64, 64, 32)
TABLE1_DENSE = (512, 256, 128)
DEFAULT_DROPOUT_FLATTEN = 0.25
DEFAULT_DROPOUT_DENSE = 0.5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_units: int | None = None
    activation: str = NONE
    dropout_after: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.dropout_after < 1.0:
            raise ModelError(f"dropout rate {self.dropout_after} outside [0, 1)")
        if self.kind in (POOL, FLATTEN):
            if self.out_units is not None or self.activation != NONE:
                raise ModelError(f"{self.kind} carries no units or activation")
        elif self.out_units is None or self.out_units < 1:
            raise ModelError(f"{self.kind} needs a positive out_units")
        if self.kind == OUTPUT and (self.activation != SOFTMAX or self.dropout_after):
            raise ModelError("output layer must use softmax and no dropout")
        if self.kind in (CONV, DENSE) and self.activation != ELU:
            raise ModelError(f"{self.kind} layers use ELU")

    @property
    def cluster(self) -> str:
        return FEATURE_EXTRACTOR if self.kind in (CONV, POOL, FLATTEN) else CLASSIFIER

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, DENSE, OUTPUT)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "out_units": self.out_units,
                "activation": self.activation, "dropout_after": self.dropout_after}


def table1_specs(conv=TABLE1_CONV, dense=TABLE1_DENSE, n_classes=N_CLASSES,
                 dropout_flatten=DEFAULT_DROPOUT_FLATTEN,
                 dropout_dense=DEFAULT_DROPOUT_DENSE) -> list[LayerSpec]:
    """Conv stack, one 2x2 pool, flatten, dense stack, softmax output.

    With the default widths this is exactly the published architecture; the
    width arguments exist for reduced test models.
    """
    specs = [LayerSpec(CONV, f, ELU) for f in conv]
    specs.append(LayerSpec(POOL))
    specs.append(LayerSpec(FLATTEN, dropout_after=dropout_flatten))
    specs += [LayerSpec(DENSE, u, ELU, dropout_dense) for u in dense]
    specs.append(LayerSpec(OUTPUT, n_classes, SOFTMAX))
    return specs


def param_shapes(specs, input_shape=INPUT_SHAPE) -> list[dict[str, tuple] | None]:
    """Parameter shapes implied by the layer specs and the input contract."""
    shapes = []
    c, h, w = input_shape
    flat = None
    for s in specs:
        if s.kind == CONV:
            if flat is not None:
                raise ModelError("conv layer after flatten")
            shapes.append({"W": (s.out_units, c, 3, 3), "b": (s.out_units,)})
            c = s.out_units
        elif s.kind == POOL:
            if h % 2 or w % 2:
                raise ModelError(f"pooling needs even spatial size, got {h}x{w}")
            h, w = h // 2, w // 2
            shapes.append(None)
        elif s.kind == FLATTEN:
            flat = c * h * w
            shapes.append(None)
        else:
            if flat is None:
                raise ModelError(f"{s.kind} layer before flatten")
            shapes.append({"W": (s.out_units, flat), "b": (s.out_units,)})
            flat = s.out_units
    return shapes


def _fan_in(shape: tuple) -> int:
    return int(np.prod(shape[1:]))


OUTPUT_INIT_GAIN = 0.1


def init_layer(spec: LayerSpec, shape: dict, rng: np.random.Generator, dtype) -> dict:
    """He-style fan-in uniform weights, zero bias.

    The softmax layer's bound is shrunk by ``OUTPUT_INIT_GAIN`` so an untrained
    model starts from near-uniform predictions (loss close to ln 10) in both
    train and eval mode. Draws happen in float64, so float32 and float64 builds
    of one seed agree up to rounding.
    """
    bound = np.sqrt(6.0 / _fan_in(shape["W"]))
    if spec.kind == OUTPUT:
        bound *= OUTPUT_INIT_GAIN
    W = rng.uniform(-bound, bound, size=shape["W"]).astype(dtype)
    return {"W": W, "b": np.zeros(shape["b"], dtype=dtype)}


def init_params(specs, rng: np.random.Generator, dtype, input_shape=INPUT_SHAPE) -> list:
    return [None if sh is None else init_layer(s, sh, rng, dtype)
            for s, sh in zip(specs, param_shapes(specs, input_shape))]


@dataclass
class Model:
    specs: list[LayerSpec]
    params: list
    trainable: list[bool]
    input_shape: tuple = INPUT_SHAPE

    def __post_init__(self):
        if not (len(self.specs) == len(self.params) == len(self.trainable)):
            raise ModelError("specs, params and trainable flags must align")
        expected = param_shapes(self.specs, self.input_shape)
        for i, (sh, p) in enumerate(zip(expected, self.params)):
            if (sh is None) != (p is None):
                raise ModelError(f"layer {i}: parameter presence does not match spec")
            if sh is not None and (p["W"].shape != sh["W"] or p["b"].shape != sh["b"]):
                raise ModelError(f"layer {i}: parameter shapes {p['W'].shape}/{p['b'].shape} != {sh}")

    @property
    def clusters(self) -> list[str]:
        return [s.cluster for s in self.specs]

    @property
    def dtype(self):
        return next(p["W"].dtype for p in self.params if p is not None)

    def copy(self) -> "Model":
        return Model(list(self.specs), copy.deepcopy(self.params), list(self.trainable),
                     tuple(self.input_shape))

    def astype(self, dtype) -> "Model":
        params = [None if p is None else {k: v.astype(dtype) for k, v in p.items()}
                  for p in self.params]
        return Model(list(self.specs), params, list(self.trainable), tuple(self.input_shape))

    def layer_param_counts(self) -> list[int]:
        return [0 if p is None else p["W"].size + p["b"].size for p in self.params]

    def param_count(self, trainable_only: bool = False) -> int:
        return sum(n for n, t in zip(self.layer_param_counts(), self.trainable)
                   if t or not trainable_only)

    def with_dropout(self, flatten: float, dense: float) -> "Model":
        """Copy of the model with dropout rates replaced (parameters shared)."""
        specs = []
        for s in self.specs:
            if s.kind == FLATTEN:
                s = LayerSpec(s.kind, s.out_units, s.activation, flatten)
            elif s.kind == DENSE:
                s = LayerSpec(s.kind, s.out_units, s.activation, dense)
            specs.append(s)
        return Model(specs, self.params, list(self.trainable), tuple(self.input_shape))

    def fingerprint(self) -> dict:
        return architecture_fingerprint(self.specs, self.input_shape)


def architecture_fingerprint(specs, input_shape=INPUT_SHAPE) -> dict:
    """Ordered layer kinds plus parameter shapes, and a sha256 over them.
    Dropout rates are training settings and are deliberately left out."""
    layers = []
    for s, sh in zip(specs, param_shapes(specs, input_shape)):
        layers.append({"kind": s.kind,
                       "shapes": None if sh is None else [list(sh["W"]), list(sh["b"])]})
    body = {"input_shape": list(input_shape), "layers": layers}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return {**body, "hash": digest}


def table1_fingerprint() -> str:
    return architecture_fingerprint(table1_specs())["hash"]


def build_model(seed: int, dtype=np.float32, conv=TABLE1_CONV, dense=TABLE1_DENSE,
                dropout_flatten=DEFAULT_DROPOUT_FLATTEN,
                dropout_dense=DEFAULT_DROPOUT_DENSE) -> Model:
    specs = table1_specs(conv, dense, N_CLASSES, dropout_flatten, dropout_dense)
    params = init_params(specs, np.random.default_rng(seed), dtype)
    return Model(specs, params, [True] * len(specs))


# --------------------------------------------------------------------- forward

def apply_dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    """Inverted dropout: zero each unit with probability ``rate``, scale survivors
    by 1/(1-rate). Returns the output and the multiplicative mask."""
    if not 0.0 <= rate < 1.0:
        raise ModelError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ModelError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape, dtype=np.float64 if x.dtype == np.float64 else np.float32) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


@dataclass
class ForwardTrace:
    start: int
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    dropout_masks: list = field(default_factory=list)
    pool_masks: list = field(default_factory=list)
    probs: np.ndarray | None = None
    mode: str = "train"


def _nhwc_input(specs, i: int) -> bool:
    """Conv layers emit channels-last activations; everything else is NCHW or 2-D."""
    return i > 0 and specs[i - 1].kind == CONV


def layer_forward(specs, i: int, p, x: np.ndarray):
    """Layer ``i`` without dropout. Returns (stored input, activation output, pool mask)."""
    spec = specs[i]
    from_conv = _nhwc_input(specs, i)
    if spec.kind == CONV:
        x = x if from_conv else T.to_nhwc(x)
        return x, T.elu(T.conv2d_forward_nhwc(x, p["W"], p["b"])), None
    if spec.kind == POOL:
        x = T.to_nchw(x) if from_conv else x
        y, mask = T.maxpool2x2_forward(x)
        return x, y, mask
    if spec.kind == FLATTEN:
        x = T.to_nchw(x) if from_conv else x
        return x, x.reshape(x.shape[0], -1), None
    z = T.matmul(x, p["W"].T) + p["b"]
    if spec.kind == DENSE:
        return x, T.elu(z), None
    return x, T.softmax(z), None


def forward(model: Model, batch: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None, start: int = 0):
    """Run layers ``start..end``.

    With ``start > 0`` the batch is taken to be the (pre-dropout) output of layer
    ``start - 1``; in train mode that layer's dropout is applied first. This lets
    a frozen, dropout-free prefix be computed once and cached.
    """
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")
    if start == 0:
        if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(model.input_shape):
            raise ShapeError(f"input must be [N,{','.join(map(str, model.input_shape))}], got {batch.shape}")
    train = mode == "train"
    trace = ForwardTrace(start=start, mode=mode)
    n = len(model.specs)
    trace.inputs = [None] * n
    trace.outputs = [None] * n
    trace.dropout_masks = [None] * n
    trace.pool_masks = [None] * n
    x = batch
    if start > 0 and train and model.specs[start - 1].dropout_after > 0:
        x, trace.dropout_masks[start - 1] = apply_dropout(x, model.specs[start - 1].dropout_after, rng)
    for i in range(start, n):
        spec = model.specs[i]
        trace.inputs[i], y, pmask = layer_forward(model.specs, i, model.params[i], x)
        trace.outputs[i] = y
        trace.pool_masks[i] = pmask
        if train and spec.dropout_after > 0:
            y, trace.dropout_masks[i] = apply_dropout(y, spec.dropout_after, rng)
        x = y
    trace.probs = x
    return x, trace


def forward_features(model: Model, batch: np.ndarray, stop: int, batch_size: int = 256) -> np.ndarray:
    """Eval-mode output of layers ``0..stop-1`` (before layer ``stop-1``'s dropout)."""
    outs = []
    for lo in range(0, len(batch), batch_size):
        x = batch[lo:lo + batch_size]
        for i in range(stop):
            _, x, _ = layer_forward(model.specs, i, model.params[i], x)
        outs.append(x)
    return np.concatenate(outs)


def lowest_grad_layer(model: Model, start: int = 0) -> int:
    """Index of the lowest layer that needs gradients: the first trainable
    parameterised layer at or after ``start``."""
    for i in range(start, len(model.specs)):
        if model.params[i] is not None and model.trainable[i]:
            return i
    return len(model.specs)


# -------------------------------------------------------------------- backward

def backward(model: Model, trace: ForwardTrace, labels: np.ndarray) -> list:
    """Gradients of mean cross-entropy for every parameterised layer.

    Returns one ``{"W", "b"}`` dict per layer, or ``None`` for parameter-free
    layers and for layers below the lowest trainable one (backpropagation stops
    there). Frozen layers sitting above a trainable one still get gradients, the
    optimizer skips them via ``model.trainable``.
    """
    if trace is None or trace.probs is None:
        raise TraceError("backward needs the trace of a preceding forward pass")
    if trace.mode != "train":
        raise TraceError("backward needs a train-mode trace")
    n_layers = len(model.specs)
    if len(trace.outputs) != n_layers:
        raise TraceError("trace layer count does not match the model")
    probs = trace.probs
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise TraceError(f"labels shape {labels.shape} does not match batch of {probs.shape[0]}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise TraceError("labels out of range")

    stop = lowest_grad_layer(model, trace.start)
    grads = [None] * n_layers
    nb = probs.shape[0]
    g = probs.copy()
    g[np.arange(nb), labels] -= 1
    g /= nb
    for i in range(n_layers - 1, stop - 1, -1):
        spec, p = model.specs[i], model.params[i]
        if spec.kind != OUTPUT:
            if trace.dropout_masks[i] is not None:
                g = g * trace.dropout_masks[i]
            if spec.activation == ELU:
                g = g * T.elu_grad_from_output(trace.outputs[i])
        x = trace.inputs[i]
        need_input = i > stop
        if spec.kind in (DENSE, OUTPUT):
            grads[i] = {"W": g.T @ x, "b": g.sum(axis=0)}
            g = g @ p["W"] if need_input else None
        elif spec.kind == CONV:
            gx, gw, gb = T.conv2d_backward_nhwc(x, p["W"], g, need_input_grad=need_input)
            grads[i] = {"W": gw, "b": gb}
            g = gx
        elif spec.kind == POOL:
            g = T.maxpool2x2_backward(g, trace.pool_masks[i])
        else:
            g = g.reshape(x.shape)
        if g is not None and _nhwc_input(model.specs, i) and spec.kind != CONV:
            g = T.to_nhwc(g)
        elif g is not None and spec.kind == CONV and not _nhwc_input(model.specs, i):
            g = T.to_nchw(g)
    return grads
