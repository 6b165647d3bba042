"""Reliable Sample Memory: entropy bookkeeping, the adaptive threshold eta,
the sorted memory partition and class prototypes."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, EmptyIteration, InvalidInput
from .numeric import minmax_normalize

log = logging.getLogger(__name__)

MISSING = np.nan  # sentinel for a class with no predicted samples in an iteration


@dataclass
class EntropyMatrix:
    """Rows are iterations, columns are classes.

    Entry [i, c] is the minimum of class c's min-max-normalised entropies at
    iteration i, or NaN when nothing was predicted as c.  ``window`` limits
    how many of the most recent rows feed the threshold (None = all history).
    """

    n_classes: int
    rows: list[np.ndarray] = field(default_factory=list)
    degenerate: list[np.ndarray] = field(default_factory=list)
    window: int | None = None

    @property
    def values(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, self.n_classes))
        return np.vstack(self.rows)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration"] + [f"class_{c}" for c in range(self.n_classes)])
            for i, row in enumerate(self.rows):
                writer.writerow([i] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def normalize_per_class(entropies, labels, n_classes: int):
    """Min-max normalise entropies within each predicted class.

    Returns ``(normalized, degenerate_flags)`` where the flags mark classes
    whose entropies had no range.
    """
    entropies = np.asarray(entropies, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    out = np.zeros_like(entropies)
    flags = np.zeros(n_classes, dtype=bool)
    for c in range(n_classes):
        mask = labels == c
        if mask.any():
            out[mask], flags[c] = minmax_normalize(entropies[mask])
    return out, flags


def record_iteration(matrix: EntropyMatrix, per_class_entropies) -> EntropyMatrix:
    """Append one row built from raw per-class entropy lists.

    ``per_class_entropies`` is a sequence (or mapping class -> list) of N
    lists.  The matrix is updated in place and also returned.
    """
    if isinstance(per_class_entropies, Mapping):
        lists = [per_class_entropies.get(c, []) for c in range(matrix.n_classes)]
    else:
        lists = list(per_class_entropies)
        if len(lists) != matrix.n_classes:
            raise InvalidInput(f"expected {matrix.n_classes} class lists, got {len(lists)}")
    if all(len(h) == 0 for h in lists):
        raise EmptyIteration("no class received any sample this iteration")
    row = np.full(matrix.n_classes, MISSING)
    flags = np.zeros(matrix.n_classes, dtype=bool)
    for c, h in enumerate(lists):
        if len(h):
            normed, flags[c] = minmax_normalize(h)
            row[c] = normed.min()
    matrix.rows.append(row)
    matrix.degenerate.append(flags)
    return matrix


def compute_threshold(matrix: EntropyMatrix) -> float:
    """Maximum over (windowed) iterations of the minimum present class entry."""
    values = matrix.values
    if matrix.window is not None:
        values = values[-matrix.window:]
    if len(values) == 0:
        raise EmptyInput("entropy matrix has no rows")
    row_min = [np.nanmin(r) for r in values if not np.all(np.isnan(r))]
    if not row_min:
        raise EmptyInput("entropy matrix has no present entries")
    return float(max(row_min))


@dataclass
class ReliableSampleMemory:
    partition: list[np.ndarray]
    sample_ids: list[np.ndarray]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.partition), np.concatenate(self.sample_ids)


def build_memory(entropies: Sequence[tuple[int, float]], n_rows: int) -> ReliableSampleMemory:
    """Sort (id, entropy) pairs ascending and chunk them into ``n_rows`` rows.

    Rows hold floor(N_t / n_rows) entries; any remainder goes to the last row.
    """
    n_t = len(entropies)
    if n_rows <= 0 or n_rows > n_t:
        raise InvalidInput(f"n_rows={n_rows} must lie in [1, {n_t}]")
    ids = np.array([e[0] for e in entropies])
    vals = np.array([e[1] for e in entropies], dtype=np.float64)
    order = np.argsort(vals, kind="stable")
    ids, vals = ids[order], vals[order]
    size = n_t // n_rows
    bounds = [k * size for k in range(n_rows)] + [n_t]
    return ReliableSampleMemory(
        [vals[bounds[k]:bounds[k + 1]] for k in range(n_rows)],
        [ids[bounds[k]:bounds[k + 1]] for k in range(n_rows)],
    )


def select_reliable(normalized_entropies, eta: float, labels=None):
    """Indices of samples whose normalised entropy is at most ``eta``.

    With ``labels`` the result is a dict class -> indices; otherwise a flat
    index array.
    """
    h = np.asarray(normalized_entropies, dtype=np.float64)
    keep = np.flatnonzero(h <= eta)
    if labels is None:
        return keep
    labels = np.asarray(labels, dtype=int)
    groups: dict[int, np.ndarray] = {}
    for c in np.unique(labels[keep]):
        groups[int(c)] = keep[labels[keep] == c]
    return groups


def select_fixed_count(entropies, labels, per_class: int) -> np.ndarray:
    """Lowest-entropy ``per_class`` samples of each class (comparison baseline only)."""
    entropies = np.asarray(entropies)
    labels = np.asarray(labels)
    chosen = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        chosen.append(idx[np.argsort(entropies[idx], kind="stable")[:per_class]])
    return np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=int)


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # N x d, rows of absent classes are NaN
    support_count: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.support_count > 0


def compute_prototypes(features, labels, n_classes: int) -> PrototypeSet:
    """L2-normalised class means of the given (reliable) features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if features.ndim != 2:
        raise InvalidInput("features must be a 2-D matrix")
    dim = features.shape[1]
    protos = np.full((n_classes, dim), np.nan)
    support = np.zeros(n_classes, dtype=int)
    for c in range(n_classes):
        members = features[labels == c]
        if len(members) == 0:
            continue
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            log.warning("class %d prototype has zero norm; marking absent", c)
            continue
        protos[c] = mean / norm
        support[c] = len(members)
    return PrototypeSet(protos, support)
