"""Synthetic domain pairs and the JSON-lines dataset format.

File layout: the first line is a header object ``{"N": .., "d_in": .., "m": ..}``;
each following line is one sample ``{"x": [...], "y": int | null,
"domain": "source" | "target"}``.  Floats are written with ``repr`` precision
so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInput, ParseError
from .numeric import seeded_rng


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None
    domain: str
    n_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or len(self.inputs) == 0:
            raise InvalidInput("dataset needs a non-empty m x d_in input matrix")
        if not np.all(np.isfinite(self.inputs)):
            raise InvalidInput("dataset inputs must be finite")
        if self.domain not in ("source", "target"):
            raise InvalidInput(f"unknown domain tag {self.domain!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if len(self.labels) != len(self.inputs):
                raise InvalidInput("labels and inputs differ in length")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise InvalidInput(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.inputs)

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    def unlabeled(self) -> "Dataset":
        return replace(self, inputs=self.inputs.copy(), labels=None)


@dataclass(frozen=True)
class ShiftSpec:
    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise InvalidInput("shift scale must be positive")
        if self.noise < 0:
            raise InvalidInput("shift noise must be non-negative")


def gen_blobs(n_classes: int, per_class: int, d_in: int, spread: float, seed: int,
              radius: float = 4.0) -> Dataset:
    """Gaussian blobs whose centres sit evenly on a circle in coordinates (0, 1).

    Class k is centred at radius * (cos 2*pi*k/N, sin 2*pi*k/N, 0, ...); every
    coordinate gets isotropic Gaussian noise of standard deviation ``spread``.
    """
    if n_classes < 2 or per_class < 1 or d_in < 2 or spread < 0:
        raise InvalidInput("gen_blobs needs N >= 2, per_class >= 1, d_in >= 2, spread >= 0")
    rng = seeded_rng(seed)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, d_in))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    labels = np.repeat(np.arange(n_classes), per_class)
    inputs = centers[labels] + rng.normal(0.0, spread, size=(len(labels), d_in))
    return Dataset(inputs, labels, "source", n_classes)


def apply_shift(ds: Dataset, spec: ShiftSpec, seed: int) -> Dataset:
    """Rotate in plane (0, 1), scale, translate, then add Gaussian noise."""
    x = ds.inputs.copy()
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    x0, x1 = x[:, 0].copy(), x[:, 1].copy()
    x[:, 0] = c * x0 - s * x1
    x[:, 1] = s * x0 + c * x1
    x *= spec.scale
    if spec.translation:
        t = np.zeros(ds.d_in)
        t[:len(spec.translation)] = spec.translation
        x += t
    if spec.noise > 0:
        x += seeded_rng(seed).normal(0.0, spec.noise, size=x.shape)
    labels = None if ds.labels is None else ds.labels.copy()
    return Dataset(x, labels, "target", ds.n_classes)


# The standard desk-scale task ("shifted-blobs-4").
STANDARD_TASK = dict(n_classes=4, per_class=150, d_in=6, spread=0.5)
STANDARD_SHIFT = ShiftSpec(rotation=0.6, translation=(1.0, -0.5, 0.0, 0.0, 0.0, 0.0), noise=0.1)


def shifted_blobs(seed: int = 0) -> tuple[Dataset, Dataset]:
    """(labelled source, target with evaluation labels) for the standard task."""
    source = gen_blobs(seed=seed, **STANDARD_TASK)
    target = apply_shift(gen_blobs(seed=seed + 10_000, **STANDARD_TASK), STANDARD_SHIFT, seed + 20_000)
    return source, target


def save_dataset(ds: Dataset, path) -> None:
    lines = [json.dumps({"N": ds.n_classes, "d_in": ds.d_in, "m": len(ds)})]
    for i, row in enumerate(ds.inputs):
        y = None if ds.labels is None else int(ds.labels[i])
        lines.append(json.dumps({"x": [float(v) for v in row], "y": y, "domain": ds.domain}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
        n_classes, d_in, m = int(header["N"]), int(header["d_in"]), int(header["m"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    body = lines[1:]
    if len(body) != m:
        raise ParseError(f"header declares {m} samples, found {len(body)}", line=len(lines))
    xs, ys, domains = [], [], set()
    for lineno, raw in enumerate(body, start=2):
        try:
            rec = json.loads(raw)
            x = [float(v) for v in rec["x"]]
            y = rec["y"]
            domains.add(rec["domain"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed record: {exc}", line=lineno) from exc
        if len(x) != d_in:
            raise ParseError(f"expected {d_in} features, got {len(x)}", line=lineno)
        if y is not None and (not isinstance(y, int) or isinstance(y, bool)):
            raise ParseError("label must be an integer or null", line=lineno)
        xs.append(x)
        ys.append(y)
    if len(domains) != 1:
        raise ParseError(f"mixed domain tags {sorted(domains)}", line=2)
    labelled = [y is not None for y in ys]
    if any(labelled) and not all(labelled):
        raise ParseError("labels must be present on all samples or none", line=2 + labelled.index(False))
    labels = np.array(ys, dtype=int) if all(labelled) else None
    try:
        return Dataset(np.array(xs), labels, domains.pop(), n_classes)
    except InvalidInput as exc:
        raise ParseError(str(exc)) from exc
