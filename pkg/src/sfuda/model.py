"""Two-stage network: tanh MLP feature extractor F followed by a linear classifier C.

The same :class:`ModelParams` container holds both the frozen source model and
the adapting target model.  Gradients are derived by hand so they can be
checked against central finite differences.

Binary file layout (all integers and floats little-endian)::

    bytes 0-3    magic b"SFUM"
    bytes 4-7    uint32 format version (1)
    bytes 8-23   uint32 d_in, d_h, d_f, N
    byte  24     uint8 frozen flag (0/1)
    bytes 25-    float64 arrays W1 (d_in x d_h), b1 (d_h), W2 (d_h x d_f),
                 b2 (d_f), Wc (d_f x N), bc (N), each row-major

The JSON form stores the same header keys plus one nested list per array.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, FrozenModel, InvalidInput, ParseError
from .numeric import entropy_rows, seeded_rng, softmax_rows

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wc", "bc")
_MAGIC = b"SFUM"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIB")


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        d_in, d_h = self.W1.shape
        d_f = self.W2.shape[1]
        n = self.Wc.shape[1]
        expected = {
            "W1": (d_in, d_h), "b1": (d_h,), "W2": (d_h, d_f),
            "b2": (d_f,), "Wc": (d_f, n), "bc": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidInput(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInput(f"{name} has non-finite entries")
        if self.frozen:
            for name in PARAM_NAMES:
                getattr(self, name).flags.writeable = False

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1], self.Wc.shape[1]

    @property
    def n_classes(self) -> int:
        return self.Wc.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self, frozen: bool | None = None) -> "ModelParams":
        return ModelParams(
            **{k: v.copy() for k, v in self.arrays().items()},
            frozen=self.frozen if frozen is None else frozen,
        )

    def to_bytes(self) -> bytes:
        d_in, d_h, d_f, n = self.dims
        parts = [_HEADER.pack(_MAGIC, _VERSION, d_in, d_h, d_f, n, int(self.frozen))]
        parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays().values()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        if len(blob) < _HEADER.size:
            raise ParseError("model file too short for header")
        magic, version, d_in, d_h, d_f, n, frozen = _HEADER.unpack_from(blob)
        if magic != _MAGIC or version != _VERSION:
            raise ParseError("not a model file (bad magic or version)")
        shapes = [(d_in, d_h), (d_h,), (d_h, d_f), (d_f,), (d_f, n), (n,)]
        offset = _HEADER.size
        arrays = {}
        for name, shape in zip(PARAM_NAMES, shapes):
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(blob):
                raise ParseError(f"model file truncated inside {name}")
            arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
            offset = end
        if offset != len(blob):
            raise ParseError("trailing bytes after model arrays")
        return cls(**arrays, frozen=bool(frozen))

    def to_json(self) -> str:
        d_in, d_h, d_f, n = self.dims
        doc = {"d_in": d_in, "d_h": d_h, "d_f": d_f, "N": n, "frozen": self.frozen}
        doc.update({k: v.tolist() for k, v in self.arrays().items()})
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        try:
            doc = json.loads(text)
            return cls(**{k: doc[k] for k in PARAM_NAMES}, frozen=bool(doc["frozen"]))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ParseError(f"malformed model JSON: {exc}") from exc


def save_model(params: ModelParams, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(params.to_json())
    else:
        path.write_bytes(params.to_bytes())


def load_model(path) -> ModelParams:
    path = Path(path)
    if path.suffix == ".json":
        return ModelParams.from_json(path.read_text())
    return ModelParams.from_bytes(path.read_bytes())


def init_params(d_in: int, d_h: int, d_f: int, n_classes: int, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases."""
    rng = seeded_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    W1, b1 = layer(d_in, d_h)
    W2, b2 = layer(d_h, d_f)
    Wc, bc = layer(d_f, n_classes)
    return ModelParams(W1, b1, W2, b2, Wc, bc, frozen=False)


@dataclass
class ForwardRecord:
    features: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    # pre-activation caches for backprop
    inputs: np.ndarray = field(repr=False)
    hidden: np.ndarray = field(repr=False)


def _check_inputs(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.W1.shape[0]:
        raise InvalidInput(f"input dimension {x.shape[-1]} does not match d_in={params.W1.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("input contains non-finite entries")
    return x, single


def extract_features(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched F(x); returns (hidden, features).  No validation."""
    hidden = np.tanh(x @ params.W1 + params.b1)
    features = np.tanh(hidden @ params.W2 + params.b2)
    return hidden, features


def forward(params: ModelParams, x) -> ForwardRecord:
    """Forward pass for one input vector or a batch (rows)."""
    x, single = _check_inputs(params, x)
    hidden, features = extract_features(params, x)
    logits = features @ params.Wc + params.bc
    probs = softmax_rows(logits)
    if single:
        return ForwardRecord(features[0], logits[0], probs[0], x[0], hidden[0])
    return ForwardRecord(features, logits, probs, x, hidden)


def predict_with_entropy(params: ModelParams, x):
    """Argmax label (lowest index on ties) and self-entropy of the prediction.

    Accepts one vector, returning ``(int, float)``, or a batch, returning
    ``(labels, entropies)`` arrays.
    """
    rec = forward(params, x)
    if rec.probs.ndim == 1:
        return int(np.argmax(rec.probs)), float(entropy_rows(rec.probs[None, :])[0])
    return np.argmax(rec.probs, axis=1), entropy_rows(rec.probs)


def feature_backward(params: ModelParams, x, hidden, features, d_features, grads) -> None:
    """Accumulate dL/dW1, b1, W2, b2 into ``grads`` given dL/dfeatures."""
    d_a2 = d_features * (1.0 - features**2)
    grads["W2"] += hidden.T @ d_a2
    grads["b2"] += d_a2.sum(axis=0)
    d_a1 = (d_a2 @ params.W2.T) * (1.0 - hidden**2)
    grads["W1"] += x.T @ d_a1
    grads["b1"] += d_a1.sum(axis=0)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def cross_entropy_and_grad(params: ModelParams, x, labels, grads=None, scale=1.0):
    """Mean cross-entropy of ``labels`` under the model; gradient accumulated into ``grads``."""
    x, _ = _check_inputs(params, x)
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise EmptyInput("cross-entropy over an empty batch")
    hidden, features = extract_features(params, x)
    logits = features @ params.Wc + params.bc
    probs = softmax_rows(logits)
    rows = np.arange(len(labels))
    log_probs = logits - logits.max(axis=1, keepdims=True)
    log_probs = log_probs - np.log(np.exp(log_probs).sum(axis=1, keepdims=True))
    loss = float(-log_probs[rows, labels].mean())
    if grads is not None:
        d_logits = probs.copy()
        d_logits[rows, labels] -= 1.0
        d_logits *= scale / len(labels)
        grads["Wc"] += features.T @ d_logits
        grads["bc"] += d_logits.sum(axis=0)
        feature_backward(params, x, hidden, features, d_logits @ params.Wc.T, grads)
    return loss


def sgd_step(params: ModelParams, grads, lr: float, momentum: float = 0.9, state=None):
    """In-place SGD with heavy-ball momentum: v <- momentum*v + g; p <- p - lr*v.

    ``state`` is the velocity dict from the previous call (or None).  Returns
    ``(params, state)``.
    """
    if params.frozen:
        raise FrozenModel("cannot update a frozen model")
    if not lr > 0:
        raise InvalidInput("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise InvalidInput("momentum must lie in [0, 1)")
    if state is None:
        state = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    for name in PARAM_NAMES:
        v = state[name]
        v *= momentum
        v += grads[name]
        getattr(params, name)[...] -= lr * v
    return params, state


def pretrain_source(inputs, labels, n_classes: int | None = None, *, d_h=16, d_f=8,
                    epochs=100, lr=0.1, momentum=0.9, batch_size=32, seed=0) -> ModelParams:
    """Plain cross-entropy training on labelled source data; returns a frozen model."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise InvalidInput("inputs and labels must be aligned and non-empty")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if len(np.unique(y)) < 2:
        raise InvalidInput("source data needs at least two classes")
    params = init_params(x.shape[1], d_h, d_f, n_classes, seed)
    rng = seeded_rng(seed + 1)
    state = None
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            grads = zero_grads(params)
            cross_entropy_and_grad(params, x[idx], y[idx], grads)
            params, state = sgd_step(params, grads, lr, momentum, state)
    return params.copy(frozen=True)
