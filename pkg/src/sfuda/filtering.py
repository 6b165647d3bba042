"""Adaptive pseudo-label filtering.

Each epoch yields a threshold theta (largest per-class minimum entropy).  A
sliding window of past thetas is combined with dot-product attention into a
single threshold theta*, and samples whose entropy exceeds it are dropped.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidInput
from .numeric import softmax


def epoch_threshold(per_class_entropy_sets) -> float:
    mins = [float(np.min(h)) for h in per_class_entropy_sets if len(h)]
    if not mins:
        raise EmptyInput("every class entropy set is empty")
    return max(mins)


@dataclass
class ThresholdHistory:
    window: int = 5
    thetas: deque = field(default_factory=deque)
    alphas: np.ndarray | None = None

    def __post_init__(self):
        if self.window < 1:
            raise InvalidInput("threshold window must be positive")
        self.thetas = deque(self.thetas, maxlen=self.window)

    def push(self, theta: float) -> None:
        self.thetas.append(float(theta))
        self.alphas = None

    def __len__(self):
        return len(self.thetas)


def attention_scores(history: ThresholdHistory) -> tuple[np.ndarray, np.ndarray]:
    """Scores mean(theta) * theta_i / sqrt(rho) and their softmax.

    rho is the number of stored thresholds.  The alphas are cached on the
    history and returned alongside the raw scores.
    """
    if len(history) == 0:
        raise EmptyInput("threshold history is empty")
    thetas = np.array(history.thetas)
    scores = thetas.mean() * thetas / np.sqrt(len(thetas))
    history.alphas = softmax(scores)
    return scores, history.alphas


def weighted_threshold(history: ThresholdHistory, strict: bool = False) -> float:
    """Attention-weighted threshold.

    ``strict=True`` keeps the leading 1/rho factor, i.e. returns
    (1/rho) * sum(alpha_i * theta_i); by default the plain attention average is
    returned, since the 1/rho factor shrinks the threshold towards zero as the
    window fills.
    """
    if len(history) == 0:
        raise EmptyInput("threshold history is empty")
    if history.alphas is None or len(history.alphas) != len(history):
        attention_scores(history)
    avg = float(np.dot(history.alphas, np.array(history.thetas)))
    return avg / len(history) if strict else avg


def filter_labels(records, threshold: float):
    """Keep records whose entropy is at most ``threshold``.

    Sets ``retained`` on every record and returns ``(retained, labeling_rate)``.
    """
    records = list(records)
    if not records:
        return [], 0.0
    kept = []
    for r in records:
        r.retained = bool(r.entropy <= threshold)
        if r.retained:
            kept.append(r)
    return kept, len(kept) / len(records)
